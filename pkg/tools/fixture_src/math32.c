/* Integer math kernels: calls, loops, division; no CRT. */

void *memset(void *dst, int value, unsigned len) {
    unsigned char *p = dst;
    while (len--) *p++ = (unsigned char)value;
    return dst;
}

static unsigned gcd(unsigned a, unsigned b) {
    while (b) {
        unsigned t = a % b;
        a = b;
        b = t;
    }
    return a;
}

static int collatz_steps(unsigned n) {
    int steps = 0;
    while (n != 1 && steps < 1000) {
        n = (n & 1) ? 3 * n + 1 : n / 2;
        steps++;
    }
    return steps;
}

static int sieve_count(int limit) {
    unsigned char composite[512] = {0};
    int count = 0;
    if (limit > 512) limit = 512;
    for (int i = 2; i < limit; i++) {
        if (composite[i]) continue;
        count++;
        for (int j = i + i; j < limit; j += i) composite[j] = 1;
    }
    return count;
}

static unsigned isqrt(unsigned n) {
    unsigned x = n, y = (x + 1) / 2;
    while (y < x) {
        x = y;
        y = (x + n / x) / 2;
    }
    return x;
}

static unsigned fib_mod(int n, unsigned m) {
    unsigned a = 0, b = 1;
    for (int i = 0; i < n; i++) {
        unsigned t = (a + b) % m;
        a = b;
        b = t;
    }
    return a;
}

int mainCRTStartup(void) {
    volatile unsigned sink = 0;
    for (unsigned i = 1; i < 40; i++) {
        sink += gcd(i * 7919, i + 104729);
        sink += (unsigned)collatz_steps(i * 3 + 1);
        sink ^= isqrt(i * i * 31);
    }
    sink += (unsigned)sieve_count(500);
    sink += fib_mod(90, 1000003);
    return (int)sink;
}
