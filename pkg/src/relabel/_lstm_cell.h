/* One time step of the LSTM cell for a single row: gate order i, f, g, o. */
#include <math.h>

/* glibc's libmvec has a 2-lane tanh; announce it so the loop below can be
   vectorized without -ffast-math. Elsewhere the scalar tanh is used. */
#if defined(__x86_64__) && defined(__GLIBC__) && defined(__GNUC__) && !defined(__clang__) && !defined(__FAST_MATH__)
__attribute__((__simd__("notinbranch"))) double tanh(double);
#endif

static inline void lstm_cell_row(const double *restrict z, const double *restrict cprev,
                                 double *restrict gate, double *restrict c,
                                 double *restrict h, int H)
{
    /* separate base pointers keep the index a plain j, which the vectorizer
       needs when the build uses -fwrapv */
    const double *zi = z, *zf = z + H, *zg = z + 2 * H, *zo = z + 3 * H;
    double *gi = gate, *gf = gate + H, *gg = gate + 2 * H, *go = gate + 3 * H;
#pragma omp simd
    for (int j = 0; j < H; ++j) {
        /* sigmoid(x) = 0.5 + 0.5 tanh(x / 2): branch-free and overflow-free */
        double iv = 0.5 + 0.5 * tanh(0.5 * zi[j]);
        double fv = 0.5 + 0.5 * tanh(0.5 * zf[j]);
        double gv = tanh(zg[j]);
        double ov = 0.5 + 0.5 * tanh(0.5 * zo[j]);
        double cv = fv * cprev[j] + iv * gv;
        c[j] = cv;
        h[j] = ov * tanh(cv);
        gi[j] = iv;
        gf[j] = fv;
        gg[j] = gv;
        go[j] = ov;
    }
}
