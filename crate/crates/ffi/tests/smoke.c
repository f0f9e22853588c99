#include <stdio.h>
#include <string.h>
#include "ftcnkit.h"

static int fail(const char *what) {
    char *msg = ftcn_last_error_message();
    fprintf(stderr, "%s: %s\n", what, msg ? msg : "(none)");
    ftcn_string_free(msg);
    return 1;
}

int main(void) {
    size_t input[4] = {3, 16, 32, 32};
    FtcnArch *r50 = NULL, *ftcn = NULL;
    if (ftcn_arch_canonical("r50", 16, input, &r50) != FTCN_STATUS_OK) return fail("canonical");
    if (ftcn_arch_transform(r50, "ftcn", &ftcn) != FTCN_STATUS_OK) return fail("transform");
    size_t out[4];
    if (ftcn_arch_output_shape(ftcn, out) != FTCN_STATUS_OK) return fail("shape");
    uint64_t params = 0;
    if (ftcn_arch_count_params(ftcn, &params) != FTCN_STATUS_OK) return fail("count");
    char *text = NULL;
    if (ftcn_arch_render(ftcn, &text) != FTCN_STATUS_OK) return fail("render");
    FtcnArch *back = NULL;
    if (ftcn_arch_parse(text, &back) != FTCN_STATUS_OK) return fail("parse");
    ftcn_string_free(text);

    if (ftcn_arch_transform(r50, "bogus", &back) != FTCN_STATUS_INVALID_ARGUMENT) return 2;
    char *msg = ftcn_last_error_message();
    if (!msg || !strstr(msg, "bogus")) return 3;
    ftcn_string_free(msg);

    double scores[4] = {0.1, 0.4, 0.35, 0.8};
    uint8_t labels[4] = {0, 0, 1, 1};
    double a = 0;
    if (ftcn_auc(scores, labels, 4, &a) != FTCN_STATUS_OK) return fail("auc");

    printf("%zu %zu %zu %zu %llu %.2f\n", out[0], out[1], out[2], out[3], (unsigned long long)params, a);
    ftcn_arch_free(back);
    ftcn_arch_free(ftcn);
    ftcn_arch_free(r50);
    return 0;
}
