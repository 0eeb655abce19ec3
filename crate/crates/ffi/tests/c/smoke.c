#include <math.h>
#include <stdio.h>
#include "kanpnp.h"

int main(void) {
    double pixels[2 * 3] = {0.0, 0.2, 0.4, 0.6, 0.8, 1.0};
    KanpnpImage *a = NULL;
    if (kanpnp_image_new(2, 3, 1, pixels, &a) != KANPNP_STATUS_OK) return 1;
    double shifted[6];
    for (int i = 0; i < 6; i++) shifted[i] = pixels[i] + 0.1;
    KanpnpImage *b = NULL;
    if (kanpnp_image_new(2, 3, 1, shifted, &b) != KANPNP_STATUS_OK) return 2;
    double db = 0.0;
    if (kanpnp_psnr(a, b, 1.0, &db) != KANPNP_STATUS_OK || fabs(db - 20.0) > 1e-9) return 3;

    size_t dims[3] = {2, 4, 1};
    KanpnpNetwork *net = NULL;
    if (kanpnp_network_new(dims, 3, KANPNP_BASIS_BSPLINE, 5, 3, 7, &net) != KANPNP_STATUS_OK) return 4;
    double xy[2] = {0.25, -0.5};
    double y = 0.0;
    if (kanpnp_network_eval(net, xy, 1, &y, 1) != KANPNP_STATUS_OK || !isfinite(y)) return 5;
    if (kanpnp_network_eval(net, xy, 1, &y, 2) != KANPNP_STATUS_INVALID_ARGUMENT) return 6;
    if (kanpnp_last_error() == NULL) return 7;

    kanpnp_network_free(net);
    kanpnp_image_free(a);
    kanpnp_image_free(b);
    printf("ok %s\n", kanpnp_version());
    return 0;
}
