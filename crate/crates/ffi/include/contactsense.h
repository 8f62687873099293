#ifndef CONTACTSENSE_H
#define CONTACTSENSE_H

#include <stddef.h>
#include <stdint.h>

// Result code of every fallible call.
typedef enum {
  CS_STATUS_OK = 0,
  CS_STATUS_NULL_POINTER = 1,
  CS_STATUS_INVALID_PARAMETER = 2,
  CS_STATUS_IO = 3,
  CS_STATUS_FORMAT = 4,
  CS_STATUS_NOT_FOUND = 5,
  CS_STATUS_CONFLICT = 6,
  CS_STATUS_OUT_OF_RANGE = 7,
  CS_STATUS_BUFFER_OVERFLOW = 8,
  CS_STATUS_PANIC = 9,
  CS_STATUS_OTHER = 10,
} CsStatus;

typedef enum {
  CS_SEGMENT_KIND_CONTACT = 0,
  CS_SEGMENT_KIND_AMBIENT = 1,
} CsSegmentKind;

// Sliding-window classifier fed with 16 kHz samples.
typedef struct CsClassifier CsClassifier;

// Result of segmenting one recording.
typedef struct CsSegmentation CsSegmentation;

typedef struct {
  double alpha;
  double beta;
  double delta_min_s;
  double gamma_squeeze_s;
  double noise_percentile;
  double signal_percentile;
  double min_ambient_s;
} CsSegmentationParams;

typedef struct {
  double t_contact;
  double t_noncontact;
  double f_noise;
  double f_signal;
} CsThresholds;

typedef struct {
  double start_s;
  double end_s;
  CsSegmentKind kind;
} CsSegment;

typedef struct {
  double timestamp_s;
  // Index into leaf, twig, trunk, ambient; see `cs_class_name`.
  uint32_t class_index;
  double probabilities[4];
  double latency_ms;
} CsPrediction;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Library version as a static NUL-terminated string.
const char *cs_version(void);

// Message of the last failed call on this thread, or null. The pointer is
// valid until the next failing call on the same thread.
const char *cs_last_error_message(void);

// Static name of class `index`, or null when out of range.
const char *cs_class_name(uint32_t index);

CsSegmentationParams cs_segmentation_params_default(void);

// Validate `params`, naming every offending field in the error message.
//
// # Safety
// `params` must be null or point to a valid struct.
CsStatus cs_segmentation_params_validate(const CsSegmentationParams *params);

// Segment `n` mono samples at `sample_rate`. Null `params` means defaults.
//
// # Safety
// `samples` must point to `n` floats; `out` must be writable.
CsStatus cs_segment_samples(const float *samples,
                            size_t n,
                            uint32_t sample_rate,
                            const CsSegmentationParams *params,
                            CsSegmentation **out_handle);

// Segment a precomputed envelope of `n` frames spaced `hop_s` apart.
// Segment ends are clamped to `duration_s`.
//
// # Safety
// `values` must point to `n` doubles; `out` must be writable.
CsStatus cs_segment_envelope(const double *values,
                             size_t n,
                             double hop_s,
                             double duration_s,
                             const CsSegmentationParams *params,
                             CsSegmentation **out_handle);

// # Safety
// `h` must be a live handle; `out` must be writable.
CsStatus cs_segmentation_thresholds(const CsSegmentation *h, CsThresholds *out_thresholds);

// Number of segments of `kind`; 0 for a null handle.
//
// # Safety
// `h` must be null or a live handle.
size_t cs_segmentation_count(const CsSegmentation *h, CsSegmentKind kind);

// # Safety
// `h` must be a live handle; `out` must be writable.
CsStatus cs_segmentation_get(const CsSegmentation *h,
                             CsSegmentKind kind,
                             size_t index,
                             CsSegment *out_segment);

// # Safety
// `h` must be null or a handle not yet freed.
void cs_segmentation_free(CsSegmentation *h);

// Open a checkpoint for streaming with the default window and stride.
// `max_chunk` bounds the samples accepted per push.
//
// # Safety
// `checkpoint_path` must be a NUL-terminated UTF-8 path; `out` writable.
CsStatus cs_classifier_open(const char *checkpoint_path,
                            size_t max_chunk,
                            CsClassifier **out_handle);

// Sample rate expected by `cs_classifier_push`.
uint32_t cs_classifier_sample_rate(void);

// Append `n` samples; windows that became ready are classified and queued.
// `out_pending` (optional) receives the queue length.
//
// # Safety
// `h` must be a live handle; `samples` must point to `n` floats.
CsStatus cs_classifier_push(CsClassifier *h, const float *samples, size_t n, size_t *out_pending);

// Pop the oldest queued prediction; `OutOfRange` when the queue is empty.
//
// # Safety
// `h` must be a live handle; `out` must be writable.
CsStatus cs_classifier_pop(CsClassifier *h, CsPrediction *out_prediction);

// # Safety
// `h` must be null or a handle not yet freed.
void cs_classifier_free(CsClassifier *h);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONTACTSENSE_H */
