#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "distobs.h"

static char *slurp(const char *path) {
    FILE *f = fopen(path, "rb");
    if (!f) return NULL;
    fseek(f, 0, SEEK_END);
    long n = ftell(f);
    fseek(f, 0, SEEK_SET);
    char *buf = malloc((size_t)n + 1);
    if (fread(buf, 1, (size_t)n, f) != (size_t)n) {
        fclose(f);
        free(buf);
        return NULL;
    }
    buf[n] = '\0';
    fclose(f);
    return buf;
}

int main(int argc, char **argv) {
    if (argc < 2) return 64;
    char *json = slurp(argv[1]);
    if (!json) return 65;

    DistobsProblem *p = NULL;
    if (distobs_problem_from_json(json, &p) != DISTOBS_STATUS_OK) return 1;
    free(json);
    if (distobs_problem_state_dim(p) != 9) return 2;

    char *report = NULL;
    DistobsStatus s = distobs_analyze(p, 0, &report);
    if (s != DISTOBS_STATUS_OK || !report) return 3;
    if (!strstr(report, "\"strategy\": 1")) return 4;
    distobs_string_free(report);

    double m[4] = {0.5, 1.0, 0.0, 0.5};
    double r = 0.0;
    if (distobs_schur_radius(m, 2, &r) != DISTOBS_STATUS_OK || r < 0.4999 || r > 0.5001) return 5;

    if (distobs_analyze(p, 9, &report) != DISTOBS_STATUS_INVALID_ARGUMENT) return 6;
    if (!distobs_last_error()) return 7;

    distobs_problem_free(p);
    printf("ok\n");
    return 0;
}
