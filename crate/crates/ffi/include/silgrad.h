#ifndef SILGRAD_H
#define SILGRAD_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum SgStatus {
  SG_OK = 0,
  SG_NULL_POINTER = 1,
  SG_INVALID_ARGUMENT = 2,
  SG_IO = 3,
  SG_FORMAT = 4,
  SG_PANIC = 5,
} SgStatus;

// A trained correction network.
typedef struct SgCorrector SgCorrector;

// A chain, its meshes and a square pinhole camera.
typedef struct SgScene SgScene;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version, a static NUL-terminated string.
const char *sg_version(void);

// Copy the calling thread's last error message into `buf` (NUL-terminated,
// truncated to `len`). Returns the full message length without the NUL.
//
// # Safety
// `buf` must be null or point to `len` writable bytes.
uintptr_t sg_last_error(char *buf, uintptr_t len);

// Built-in reference chain observed by a `size`×`size` camera.
//
// # Safety
// `out` must be a valid pointer to a handle slot.
enum SgStatus sg_scene_reference(uintptr_t size, struct SgScene **out);

// Chain and meshes from an asset directory.
//
// # Safety
// `dir` must be a NUL-terminated string and `out` a valid handle slot.
enum SgStatus sg_scene_load(const char *dir, uintptr_t size, struct SgScene **out);

// # Safety
// `scene` must come from `sg_scene_*` and not be used afterwards.
void sg_scene_free(struct SgScene *scene);

// Number of joints of the chain, 0 for a null handle.
//
// # Safety
// `scene` must be null or a live handle.
uintptr_t sg_scene_joint_count(const struct SgScene *scene);

// Image width in pixels, 0 for a null handle.
//
// # Safety
// `scene` must be null or a live handle.
uintptr_t sg_scene_image_size(const struct SgScene *scene);

// Render the chain at `base`, `q` into `out` (width·height floats, row
// major). `sigma > 0` gives the soft silhouette, otherwise the hard mask.
//
// # Safety
// Pointers must reference arrays of the stated lengths.
enum SgStatus sg_scene_render(const struct SgScene *scene,
                              const double *base,
                              const double *q,
                              uintptr_t q_len,
                              double sigma,
                              float *out,
                              uintptr_t out_len);

// End-effector pose from a base estimate, the noisy leading joints and
// corrected visible joints (4 values).
//
// # Safety
// Pointers must reference arrays of the stated lengths.
enum SgStatus sg_hand_eye(const struct SgScene *scene,
                          const double *base,
                          const double *q_noisy,
                          uintptr_t q_len,
                          const double *visible,
                          double *out);

// Load a trained model.
//
// # Safety
// `file` must be a NUL-terminated string and `out` a valid handle slot.
enum SgStatus sg_corrector_load(const char *file, struct SgCorrector **out);

// # Safety
// `c` must come from `sg_corrector_load` and not be used afterwards.
void sg_corrector_free(struct SgCorrector *c);

// One-shot correction of a frame. Writes the corrected parametrization
// (Euler z, y, x, translation, 4 visible joints) to `out` (10 doubles).
// `sigma ≤ 0` selects the default temperature.
//
// # Safety
// `observed` must hold width·height floats; other pointers as stated.
enum SgStatus sg_corrector_correct(const struct SgCorrector *c,
                                   const struct SgScene *scene,
                                   const float *observed,
                                   const double *base_noisy,
                                   const double *q_noisy,
                                   uintptr_t q_len,
                                   double sigma,
                                   double *out);

// Gradient-descent correction of a frame from `init` (10 doubles).
// `keypoints` holds 6 (x, y) pairs. Non-positive `max_iterations`,
// `threshold` or `step` select the defaults. Writes the best parameters to
// `out` and, when non-null, the iteration count and whether the threshold
// was reached.
//
// # Safety
// Pointers must reference arrays of the stated lengths.
enum SgStatus sg_baseline_optimize(const struct SgScene *scene,
                                   const double *init,
                                   const float *observed,
                                   const double *keypoints,
                                   const double *q_noisy,
                                   uintptr_t q_len,
                                   uint32_t max_iterations,
                                   double threshold,
                                   double step,
                                   double *out,
                                   uint32_t *out_iterations,
                                   bool *out_converged);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SILGRAD_H */
