/*
 * myoloop C API.
 *
 * Every object is an opaque handle created by a *_create / *_load / producer
 * function and released with the matching *_free (NULL is accepted). Every
 * fallible call returns a myo_status; on failure a message describing the
 * problem is available from myo_last_error() on the same thread until the
 * next failing call. Strings returned through char** are heap allocated and
 * must be released with myo_string_free.
 *
 * Handles are not internally synchronised: use one handle from one thread at
 * a time. Distinct handles may be used concurrently.
 */
#ifndef MYOLOOP_H
#define MYOLOOP_H

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define MYO_API
#elif defined(MYOLOOP_BUILDING)
#define MYO_API __attribute__((visibility("default")))
#else
#define MYO_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum myo_status {
  MYO_OK = 0,
  MYO_E_ARGUMENT = 1,        /* null pointer or out-of-range argument */
  MYO_E_SHAPE = 2,           /* dimension mismatch */
  MYO_E_DOMAIN = 3,          /* value outside its documented range */
  MYO_E_IO = 4,              /* file or socket failure */
  MYO_E_PARSE_MAGIC = 5,     /* not a myoloop file */
  MYO_E_PARSE_VERSION = 6,   /* unsupported format version */
  MYO_E_PARSE_TRUNCATED = 7, /* file ends early */
  MYO_E_PARSE = 8,           /* malformed content */
  MYO_E_FIT = 9,             /* model fitting failed (e.g. rank deficiency) */
  MYO_E_NUMERIC = 10,        /* non-finite or ill-conditioned computation */
  MYO_E_INTERNAL = 11        /* unexpected failure */
} myo_status;

MYO_API const char* myo_version(void);
MYO_API const char* myo_status_name(myo_status status);
/* Message of the most recent failure on the calling thread ("" if none). */
MYO_API const char* myo_last_error(void);
MYO_API void myo_string_free(char* s);

typedef struct myo_participant myo_participant;
typedef struct myo_placement myo_placement;
typedef struct myo_dataset myo_dataset;
typedef struct myo_model myo_model;
typedef struct myo_decoder myo_decoder;
typedef struct myo_report myo_report;
typedef struct myo_server myo_server;

/* ---- participants ------------------------------------------------------ */

MYO_API myo_status myo_participant_create(uint64_t seed, double target_snr, myo_participant** out);
MYO_API myo_status myo_participant_load(const char* path, myo_participant** out);
MYO_API myo_status myo_participant_save(const myo_participant* p, const char* path);
MYO_API myo_status myo_participant_to_json(const myo_participant* p, char** out);
MYO_API void myo_participant_free(myo_participant* p);

/* ---- sleeve placements ------------------------------------------------- */

/* Dons the sleeve with a mean electrode shift of shift_mm. */
MYO_API myo_status myo_placement_don(const myo_participant* p, double shift_mm, uint64_t seed,
                                     myo_placement** out);
/* The placement a recorded session was made with. */
MYO_API myo_status myo_placement_from_dataset(const myo_dataset* d, myo_placement** out);
MYO_API myo_status myo_placement_shift_mm(const myo_placement* pl, double* out);
MYO_API void myo_placement_free(myo_placement* pl);

/* ---- recording sessions ------------------------------------------------ */

typedef struct myo_record_options {
  size_t sessions;     /* number of sessions in the series, >= 1 */
  double shift_mm;     /* mean electrode shift per donning */
  int repetitions;     /* repetitions of each of the six movements */
} myo_record_options;

MYO_API void myo_record_options_default(myo_record_options* o);
/* Records session `index` of the series defined by (options, seed). Each
 * session gets its own donning and movement speeds / hold times; sessions can
 * be produced independently and in any order. */
MYO_API myo_status myo_record_session(const myo_participant* p, const myo_record_options* o,
                                      uint64_t seed, size_t index, myo_dataset** out);
MYO_API myo_status myo_dataset_load(const char* path, myo_dataset** out);
MYO_API myo_status myo_dataset_save(const myo_dataset* d, const char* path);
MYO_API myo_status myo_dataset_ticks(const myo_dataset* d, size_t* out);
MYO_API myo_status myo_dataset_channels(const myo_dataset* d, size_t* out);
MYO_API myo_status myo_dataset_id(const myo_dataset* d, char** out);
MYO_API void myo_dataset_free(myo_dataset* d);

/* ---- training ---------------------------------------------------------- */

typedef enum myo_arch { MYO_ARCH_SHALLOW = 0, MYO_ARCH_DEEP = 1 } myo_arch;

typedef struct myo_train_options {
  myo_arch arch;
  double learning_rate;
  double momentum;
  size_t batch_size;
  int max_epochs;
  uint64_t seed;
  int fit_smoother;      /* nonzero: fit the output Kalman smoother */
  size_t deep_widths[3]; /* channel widths of the three residual stages */
} myo_train_options;

MYO_API void myo_train_options_default(myo_train_options* o);
/* Accumulates the sessions, holds out the tail of each for validation and
 * trains with early stopping. */
MYO_API myo_status myo_train(const myo_dataset* const* sessions, size_t count,
                             const myo_train_options* o, myo_model** out);

typedef struct myo_model_info {
  myo_arch arch;
  size_t parameters;
  int epochs_run;
  int stopped_epoch;
  int early_stopped;
  double final_train_rmse;      /* of the kept epoch */
  double final_validation_rmse; /* of the kept epoch */
  double wall_time_s;           /* 0 for loaded models */
  int has_smoother;
} myo_model_info;

MYO_API myo_status myo_model_info_get(const myo_model* m, myo_model_info* out);
/* Per-epoch history as JSON: {"train_rmse":[...],"validation_rmse":[...]}. */
MYO_API myo_status myo_model_history_json(const myo_model* m, char** out);
MYO_API myo_status myo_model_load(const char* path, myo_model** out);
MYO_API myo_status myo_model_save(const myo_model* m, const char* path);
MYO_API void myo_model_free(myo_model* m);

/* ---- decoders ---------------------------------------------------------- */

/* use_smoother requires a model trained with fit_smoother. */
MYO_API myo_status myo_decoder_from_model(const myo_model* m, int use_smoother, myo_decoder** out);
/* Kalman filter decoding kinematics directly from feature channels. */
MYO_API myo_status myo_decoder_feature_kalman(const myo_dataset* const* sessions, size_t count,
                                              myo_decoder** out);
/* Debug decoders: the intended state itself, or always rest. */
MYO_API myo_status myo_decoder_oracle(myo_decoder** out);
MYO_API myo_status myo_decoder_zero(myo_decoder** out);
MYO_API void myo_decoder_free(myo_decoder* d);

/* ---- closed-loop experiments ------------------------------------------ */

typedef struct myo_experiment_options {
  size_t blocks;           /* trials per condition */
  size_t selected_dofs;    /* DOFs moved per target, 1..6 */
  uint64_t seed;
  size_t jobs;             /* worker threads; results do not depend on it */
  double pursuit_time_constant_s;
  double reaction_delay_s;
  double motor_noise;
} myo_experiment_options;

MYO_API void myo_experiment_options_default(myo_experiment_options* o);
/* Counterbalanced cross-over of `count` >= 2 decoders, one trial of each per
 * block. names may be NULL (decoder descriptions are used). */
MYO_API myo_status myo_run_experiment(const myo_decoder* const* decoders, const char* const* names,
                                      size_t count, const myo_participant* p,
                                      const myo_placement* pl, const myo_experiment_options* o,
                                      myo_report** out);
/* One decoder, one trial per block, with the block seeds and targets an
 * experiment of the same options would use. name may be NULL. */
MYO_API myo_status myo_run_evaluation(const myo_decoder* decoder, const char* name,
                                      const myo_participant* p, const myo_placement* pl,
                                      const myo_experiment_options* o, myo_report** out);
MYO_API myo_status myo_report_json(const myo_report* r, char** out);
MYO_API myo_status myo_report_csv(const myo_report* r, char** out);
MYO_API myo_status myo_report_summary(const myo_report* r, size_t condition, double* mean,
                                      double* sem, size_t* n);
MYO_API void myo_report_free(myo_report* r);

/* ---- live loop server -------------------------------------------------- */

typedef struct myo_server_options {
  const char* host;   /* NULL means 127.0.0.1 */
  uint16_t port;      /* 0 asks the OS for a free port */
  int lockstep;       /* nonzero: each controller intent advances one tick */
  uint64_t seed;      /* EMG noise between trials */
  int handle_signals; /* nonzero: SIGINT / SIGTERM stop the server */
} myo_server_options;

MYO_API void myo_server_options_default(myo_server_options* o);
/* Binds immediately so the port is known before myo_server_run. */
MYO_API myo_status myo_server_create(const myo_decoder* d, const myo_participant* p,
                                     const myo_placement* pl, const myo_server_options* o,
                                     myo_server** out);
MYO_API myo_status myo_server_port(const myo_server* s, uint16_t* out);
/* Blocks until myo_server_stop (from another thread) or a handled signal. */
MYO_API myo_status myo_server_run(myo_server* s);
MYO_API myo_status myo_server_stop(myo_server* s);
MYO_API void myo_server_free(myo_server* s);

#ifdef __cplusplus
}
#endif

#endif /* MYOLOOP_H */
