#include <math.h>
#include <stdio.h>
#include "xdt.h"

#define CHECK(call)                                                          \
    do {                                                                     \
        XdtStatus st_ = (call);                                              \
        if (st_ != XDT_STATUS_OK) {                                          \
            fprintf(stderr, "%s -> %d: %s\n", #call, (int)st_,               \
                    xdt_last_error_message());                               \
            return 1;                                                        \
        }                                                                    \
    } while (0)

int main(void) {
    size_t dims[3] = {16, 16, 8};
    double spacing[3] = {1.0, 1.0, 1.0};
    double origin[3] = {-7.5, -7.5, -3.5};
    float data[16 * 16 * 8];
    for (size_t i = 0; i < sizeof data / sizeof data[0]; i++) data[i] = 1.0f;

    XdtVolume *vol = NULL;
    CHECK(xdt_volume_new(dims, spacing, origin, 1, data, 16 * 16 * 8, &vol));

    double angles[1] = {0.0};
    size_t det[2] = {16, 8};
    double det_spacing[2] = {1.0, 1.0};
    XdtViews *views = NULL;
    CHECK(xdt_views_new(angles, 1, det, det_spacing, NULL, &views));

    XdtProjectorConfig cfg = xdt_projector_config_default();
    cfg.interpolation = XDT_INTERPOLATION_NEAREST;
    XdtImageSet *proj = NULL;
    CHECK(xdt_forward_project(vol, views, &cfg, &proj));

    const float *px = NULL;
    size_t n = 0;
    CHECK(xdt_image_set_data(proj, 0, &px, &n));
    /* a uniform 16 mm thick slab sums to 16 along every interior ray */
    if (n != 16 * 8 || fabsf(px[8 * 16 / 2 + 8] - 16.0f) > 1e-3f) {
        fprintf(stderr, "unexpected projection value %f\n", px[8 * 16 / 2 + 8]);
        return 1;
    }

    XdtBox2 a = {0, 0, 2, 2, NAN};
    XdtBox2 b = {1, 0, 3, 2, NAN};
    double iou = 0;
    CHECK(xdt_iou2(&a, &b, &iou));
    if (fabs(iou - 1.0 / 3.0) > 1e-12) return 1;

    if (xdt_iou2(NULL, &b, &iou) != XDT_STATUS_NULL_POINTER) return 1;

    xdt_image_set_free(proj);
    xdt_views_free(views);
    xdt_volume_free(vol);
    printf("ok\n");
    return 0;
}
