#include <stdio.h>
#include "itrcr.h"

int main(int argc, char **argv) {
    ItrcrDataset *ds = NULL;
    ItrcrModel *model = NULL;
    size_t n = 0, p = 0;
    if (argc < 2 || itrcr_dataset_load(argv[1], &ds) != ITRCR_STATUS_OK) {
        fprintf(stderr, "load: %s\n", itrcr_last_error_message());
        return 1;
    }
    itrcr_dataset_shape(ds, &n, &p);
    ItrcrFitOptions opt = itrcr_fit_options_default();
    opt.n_tree = 10;
    if (itrcr_model_fit(ds, &opt, &model) != ITRCR_STATUS_OK) {
        fprintf(stderr, "fit: %s\n", itrcr_last_error_message());
        return 1;
    }
    double z[16] = {0};
    uint32_t a = 99, phase = 0;
    if (p > 16 || itrcr_model_recommend(model, z, p, NULL, 0, &a, &phase) != ITRCR_STATUS_OK) {
        fprintf(stderr, "recommend: %s\n", itrcr_last_error_message());
        return 1;
    }
    printf("n=%zu p=%zu treatment=%u phase=%u\n", n, p, a, phase);
    if (itrcr_model_recommend(model, z, p + 1, NULL, 0, &a, &phase) == ITRCR_STATUS_OK) {
        return 1;
    }
    itrcr_model_free(model);
    itrcr_dataset_free(ds);
    return 0;
}
