#include <stdio.h>
#include <string.h>

#include "sinr.h"

#define CHECK(call)                                                        \
    do {                                                                   \
        SinrStatus s_ = (call);                                            \
        if (s_ != SINR_STATUS_OK) {                                        \
            const char *m_ = sinr_last_error();                            \
            fprintf(stderr, "%s: %d %s\n", #call, (int)s_, m_ ? m_ : "");  \
            return 1;                                                      \
        }                                                                  \
    } while (0)

int main(int argc, char **argv) {
    if (argc != 2) {
        return 2;
    }
    SinrModelHandle *model = NULL;
    CHECK(sinr_model_load(argv[1], &model));
    size_t n_species = 0;
    CHECK(sinr_model_n_species(model, &n_species));
    double lons[2] = {0.0, 0.0};
    double lats[2] = {45.0, -45.0};
    float out[4];
    CHECK(sinr_model_predict(model, lons, lats, 2, out, 4));
    char id[16];
    size_t len = 0;
    CHECK(sinr_model_species_id(model, 0, id, sizeof id, &len));
    printf("%zu %s %.4f %.4f\n", n_species, id, out[0], out[2]);
    if (sinr_model_load("/nonexistent/model", &model) != SINR_STATUS_IO) {
        return 3;
    }
    sinr_model_free(model);
    return 0;
}
