#include <math.h>
#include <stdio.h>
#include <stdlib.h>

#include "isodefeat.h"

#define CHECK(call)                                                                     \
    do {                                                                                \
        IsoStatus s_ = (call);                                                          \
        if (s_ != ISO_STATUS_OK) {                                                      \
            fprintf(stderr, "%s failed with %d: %s\n", #call, (int)s_, iso_last_error()); \
            return 1;                                                                   \
        }                                                                               \
    } while (0)

int main(void) {
    IsoProblem *p = NULL;
    if (iso_problem_preset("nope", &p) != ISO_STATUS_INVALID_ARGUMENT || iso_last_error() == NULL) {
        return 2;
    }
    CHECK(iso_problem_preset("flag", &p));
    if (iso_problem_set_run(p, 2.0, NAN, 0, -1) != ISO_STATUS_CONFIG) {
        return 3;
    }
    CHECK(iso_problem_set_run(p, NAN, INFINITY, 0, -1));

    IsoRun *run = NULL;
    CHECK(iso_defeature(p, &run));
    IsoRunStatus status;
    size_t count = 0;
    CHECK(iso_run_status(run, &status));
    CHECK(iso_run_iterations(run, &count));
    if (status != ISO_RUN_STATUS_CONVERGED || count != 1) {
        return 4;
    }
    IsoIteration it;
    CHECK(iso_run_iteration(run, 0, &it));

    size_t n = 0;
    if (iso_run_control_points(run, NULL, 0, &n) != ISO_STATUS_BUFFER_TOO_SMALL || n == 0) {
        return 5;
    }
    double *xy = malloc(2 * n * sizeof(double));
    CHECK(iso_run_control_points(run, xy, n, &n));
    double x, y;
    CHECK(iso_run_boundary_point(run, ISO_SIDE_WEST, 0.5, &x, &y));
    if (iso_run_boundary_point(run, 9, 0.5, &x, &y) != ISO_STATUS_INVALID_ARGUMENT) {
        return 6;
    }
    printf("J = %.17e\nboundary_dofs = %zu\npoints = %zu\nwest = %.17e %.17e\n", it.value, it.boundary_dofs, n, x, y);

    free(xy);
    iso_run_free(run);
    iso_problem_free(p);
    iso_problem_free(NULL);
    return 0;
}
