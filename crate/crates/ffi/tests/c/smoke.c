#include <math.h>
#include <stdio.h>
#include "aeria.h"

#define CHECK(x)                                                    \
    do {                                                            \
        if (!(x)) {                                                 \
            const char *e = aeria_last_error();                     \
            fprintf(stderr, "%s:%d: %s (%s)\n", __FILE__, __LINE__, \
                    #x, e ? e : "no error");                        \
            return 1;                                               \
        }                                                           \
    } while (0)

int main(void) {
    AeriaDemand d[3] = {
        {1, 10.0, 2.0, 1, 1, 2.0, 0.0, 1.0},
        {2, 12.0, 4.0, 1, 1, 4.0, 0.0, 1.0},
        {3, 6.3, 3.0, 1, 1, 3.0, 0.0, 1.0},
    };
    AeriaAuctionParams params = {10.0, 1.0, 0.5, 0};
    AeriaOutcome *o = NULL;
    CHECK(aeria_auction_run(d, 3, &params, 7, &o) == AERIA_STATUS_OK);

    AeriaOutcomeSummary s;
    CHECK(aeria_outcome_summary(o, &s) == AERIA_STATUS_OK);
    CHECK(s.allocation_count == 3);
    CHECK(s.constraints_ok);

    double paid = 0.0;
    for (size_t i = 0; i < s.allocation_count; i++) {
        AeriaAllocation a;
        CHECK(aeria_outcome_allocation(o, i, &a) == AERIA_STATUS_OK);
        paid += a.payment;
    }
    CHECK(fabs(paid - s.revenue) < 1e-9);

    char *json = NULL;
    CHECK(aeria_outcome_to_json(o, &json) == AERIA_STATUS_OK);
    CHECK(json != NULL);
    aeria_string_free(json);
    aeria_outcome_free(o);

    double y = 0.0;
    CHECK(aeria_optimal_y(0.5, &y) == AERIA_STATUS_INVALID_ARGUMENT);
    CHECK(aeria_last_error() != NULL);
    CHECK(aeria_optimal_y(2.0, &y) == AERIA_STATUS_OK);

    AeriaProfile *p = NULL;
    CHECK(aeria_profile_builtin("medium", &p) == AERIA_STATUS_OK);
    size_t layers = 0;
    CHECK(aeria_profile_layer_count(p, &layers) == AERIA_STATUS_OK && layers > 0);
    aeria_profile_free(p);

    printf("ok revenue=%.6f y=%.6f\n", s.revenue, y);
    return 0;
}
