/* Sorting, searching and a small state machine (switch); no CRT. */

static void insertion_sort(int *a, int n) {
    for (int i = 1; i < n; i++) {
        int key = a[i];
        int j = i - 1;
        while (j >= 0 && a[j] > key) {
            a[j + 1] = a[j];
            j--;
        }
        a[j + 1] = key;
    }
}

static void quicksort(int *a, int lo, int hi) {
    if (lo >= hi) return;
    int pivot = a[(lo + hi) / 2];
    int i = lo, j = hi;
    while (i <= j) {
        while (a[i] < pivot) i++;
        while (a[j] > pivot) j--;
        if (i <= j) {
            int t = a[i]; a[i] = a[j]; a[j] = t;
            i++; j--;
        }
    }
    quicksort(a, lo, j);
    quicksort(a, i, hi);
}

static int binary_search(const int *a, int n, int key) {
    int lo = 0, hi = n - 1;
    while (lo <= hi) {
        int mid = (lo + hi) / 2;
        if (a[mid] == key) return mid;
        if (a[mid] < key) lo = mid + 1; else hi = mid - 1;
    }
    return -1;
}

static int run_machine(const unsigned char *input, int n) {
    int state = 0, score = 0;
    for (int i = 0; i < n; i++) {
        switch (state) {
        case 0: state = (input[i] & 1) ? 1 : 2; break;
        case 1: score += input[i]; state = (input[i] > 100) ? 3 : 0; break;
        case 2: score -= input[i] / 2; state = 4; break;
        case 3: state = 0; score++; break;
        default: state = (score & 1) ? 0 : 1; break;
        }
    }
    return score;
}

int mainCRTStartup(void) {
    int data[64];
    unsigned char tape[64];
    unsigned seed = 0x1234567;
    for (int i = 0; i < 64; i++) {
        seed = seed * 1103515245 + 12345;
        data[i] = (int)(seed >> 8) % 1000;
        tape[i] = (unsigned char)(seed >> 16);
    }
    volatile int sink = 0;
    insertion_sort(data, 32);
    quicksort(data + 32, 0, 31);
    for (int k = 0; k < 16; k++)
        sink += binary_search(data, 32, k * 50);
    sink += run_machine(tape, 64);
    return sink;
}
