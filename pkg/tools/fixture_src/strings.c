/* Branch-heavy string routines; no CRT. */

static int str_len(const char *s) {
    int n = 0;
    while (s[n]) n++;
    return n;
}

static int str_cmp(const char *a, const char *b) {
    while (*a && *a == *b) { a++; b++; }
    return (unsigned char)*a - (unsigned char)*b;
}

static void str_rev(char *s, int n) {
    for (int i = 0, j = n - 1; i < j; i++, j--) {
        char t = s[i]; s[i] = s[j]; s[j] = t;
    }
}

static int count_vowels(const char *s) {
    int n = 0;
    for (; *s; s++) {
        char c = *s;
        if (c >= 'A' && c <= 'Z') c += 32;
        if (c == 'a' || c == 'e' || c == 'i' || c == 'o' || c == 'u') n++;
    }
    return n;
}

static unsigned djb2(const char *s) {
    unsigned h = 5381;
    while (*s) h = h * 33 + (unsigned char)*s++;
    return h;
}

static int is_palindrome(const char *s, int n) {
    for (int i = 0; i < n / 2; i++)
        if (s[i] != s[n - 1 - i]) return 0;
    return 1;
}

int mainCRTStartup(void) {
    char buf[32];
    const char *words[4] = {"level", "binary", "rotor", "opcode"};
    volatile int sink = 0;
    for (int w = 0; w < 4; w++) {
        int n = str_len(words[w]);
        for (int i = 0; i <= n; i++) buf[i] = words[w][i];
        if (is_palindrome(buf, n)) sink += 1000;
        str_rev(buf, n);
        sink += str_cmp(buf, words[w]);
        sink += count_vowels(words[w]);
        sink ^= (int)djb2(buf);
    }
    return sink;
}
