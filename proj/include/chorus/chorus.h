#ifndef CHORUS_CHORUS_H
#define CHORUS_CHORUS_H

#ifdef __cplusplus
extern "C" {
#endif

#if defined(__GNUC__)
#define CHORUS_API __attribute__((visibility("default")))
#else
#define CHORUS_API
#endif

typedef enum chorus_status {
  CHORUS_OK = 0,
  CHORUS_ERR_INVALID_ARGUMENT = 1,
  CHORUS_ERR_DIMENSION_MISMATCH = 2,
  CHORUS_ERR_IO = 3,
  CHORUS_ERR_PARSE = 4,
  CHORUS_ERR_DIVERGENCE = 5,
  CHORUS_ERR_NOT_FOUND = 6,
  CHORUS_ERR_CONFLICT = 7,
  CHORUS_ERR_STATE = 8,
  CHORUS_ERR_USAGE = 9,
  CHORUS_ERR_INTERNAL = 10
} chorus_status;

typedef struct chorus_config chorus_config;
typedef struct chorus_service chorus_service;

CHORUS_API const char* chorus_version(void);

/* Message of the last failed call on this thread; empty after success. */
CHORUS_API const char* chorus_last_error(void);

CHORUS_API const char* chorus_status_name(chorus_status status);

/* Frees strings returned through `char**` out-parameters. */
CHORUS_API void chorus_string_free(char* s);

/* Flat `key = value` configuration. */
CHORUS_API chorus_status chorus_config_create(chorus_config** out);
CHORUS_API chorus_status chorus_config_load(const char* path, chorus_config** out);
CHORUS_API chorus_status chorus_config_parse(const char* text, chorus_config** out);
CHORUS_API chorus_status chorus_config_set(chorus_config* config, const char* key, const char* value);
/* CHORUS_ERR_NOT_FOUND if the key is unset. */
CHORUS_API chorus_status chorus_config_get(const chorus_config* config, const char* key, char** out_value);
CHORUS_API chorus_status chorus_config_serialize(const chorus_config* config, char** out_text);
CHORUS_API chorus_status chorus_config_save(const chorus_config* config, const char* path);
/* Applies CHORUS_<KEY> environment variables. */
CHORUS_API chorus_status chorus_config_apply_env(chorus_config* config);
CHORUS_API void chorus_config_destroy(chorus_config* config);

/* Runs an experiment command and returns its JSON summary. Commands:
 * train-supervised, fit-reward, finetune-reward, compile-offpolicy-dataset,
 * train-reinforce, evaluate-offpolicy, train-transition, train-qlearning,
 * simulate, ab-stats, synthesize. */
CHORUS_API chorus_status chorus_run(const char* command, const chorus_config* config, char** out_summary);

/* Chat and annotation service configured by dialogues_log, labels_log,
 * service_policy, max_turns and seed. */
CHORUS_API chorus_status chorus_service_create(const chorus_config* config, chorus_service** out);
/* Handles one request in-process. `body` and `user_id` may be NULL. */
CHORUS_API chorus_status chorus_service_handle(chorus_service* service, const char* method, const char* path,
                                               const char* body, const char* user_id, int* out_http_status,
                                               char** out_body);
/* Serves HTTP on a background thread; port 0 picks a free port. */
CHORUS_API chorus_status chorus_service_start(chorus_service* service, const char* host, int port, int* out_port);
CHORUS_API chorus_status chorus_service_stop(chorus_service* service);
/* Stops the service and appends unrated sessions to the dialogue log. */
CHORUS_API void chorus_service_destroy(chorus_service* service);

#ifdef __cplusplus
}
#endif

#endif
