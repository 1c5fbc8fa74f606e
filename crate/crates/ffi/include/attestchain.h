#ifndef ATTESTCHAIN_H
#define ATTESTCHAIN_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum AcRole {
  AC_ROLE_HOLDER = 0,
  AC_ROLE_ATTESTING_ENTITY = 1,
  AC_ROLE_CREDENTIAL_ISSUER = 2,
  AC_ROLE_VERIFIER = 3,
} AcRole;

/**
 * Result of every fallible call.
 */
typedef enum AcStatus {
  AC_STATUS_OK = 0,
  AC_STATUS_NULL_ARGUMENT = 1,
  AC_STATUS_INVALID_UTF8 = 2,
  AC_STATUS_INVALID_INPUT = 3,
  AC_STATUS_UNAUTHENTICATED = 4,
  AC_STATUS_FORBIDDEN = 5,
  AC_STATUS_NOT_FOUND = 6,
  AC_STATUS_CONFLICT = 7,
  AC_STATUS_UNREACHABLE = 8,
  AC_STATUS_BAD_PASSPHRASE = 9,
  AC_STATUS_STORAGE = 10,
  AC_STATUS_INTERNAL = 11,
  AC_STATUS_PANIC = 12,
} AcStatus;

/**
 * An HTTP client for one gateway; holds at most one session.
 */
typedef struct AcClient AcClient;

/**
 * A gateway serving on a loopback port until freed.
 */
typedef struct AcGateway AcGateway;

/**
 * An encrypted wallet file, decrypted in memory.
 */
typedef struct AcWallet AcWallet;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Library version, a static string.
 */
const char *ac_version(void);

/**
 * Error code of the last failed call on this thread, e.g. `"SkippedStep"`.
 * Empty if none. Valid until the next failing call on this thread.
 */
const char *ac_last_error_code(void);

/**
 * Human-readable message for the last failed call on this thread.
 */
const char *ac_last_error_message(void);

/**
 * # Safety
 * `s` must be null or a string returned through an `out` parameter of this
 * library, not yet freed.
 */
void ac_string_free(char *s);

/**
 * Canonical form of a JSON document: sorted keys, no whitespace.
 *
 * # Safety
 * `json` must be a nul-terminated string; `out` must be writable.
 */
enum AcStatus ac_canonicalize(const char *json, char **out);

/**
 * The DID derived from a hex Ed25519 public key.
 *
 * # Safety
 * `signing_key_hex` must be a nul-terminated string; `out` must be writable.
 */
enum AcStatus ac_did_for_signing_key(const char *signing_key_hex, char **out);

/**
 * Start a gateway on `data_dir`, listening on an ephemeral loopback port.
 * With `open_registration`, any caller may register privileged roles.
 *
 * # Safety
 * `data_dir` must be a nul-terminated path; `out` must be writable.
 */
enum AcStatus ac_gateway_start(const char *data_dir,
                               bool open_registration,
                               struct AcGateway **out);

/**
 * Base URL of a running gateway.
 *
 * # Safety
 * `gateway` must be a live handle; `out` must be writable.
 */
enum AcStatus ac_gateway_url(const struct AcGateway *gateway, char **out);

/**
 * Stop the gateway and release it.
 *
 * # Safety
 * `gateway` must be null or a handle from [`ac_gateway_start`], not yet freed.
 */
void ac_gateway_free(struct AcGateway *gateway);

/**
 * Generate a fresh identity into a new wallet file. Zero KDF parameters
 * select the recommended cost.
 *
 * # Safety
 * `path` and `passphrase` must be nul-terminated strings; `out` must be writable.
 */
enum AcStatus ac_wallet_create(const char *path,
                               const char *passphrase,
                               uint32_t kdf_memory_kib,
                               uint32_t kdf_iterations,
                               struct AcWallet **out);

/**
 * # Safety
 * `path` and `passphrase` must be nul-terminated strings; `out` must be writable.
 */
enum AcStatus ac_wallet_open(const char *path, const char *passphrase, struct AcWallet **out);

/**
 * # Safety
 * `wallet` must be a live handle; `out` must be writable.
 */
enum AcStatus ac_wallet_did(const struct AcWallet *wallet, char **out);

/**
 * # Safety
 * `wallet` must be null or a handle from this library, not yet freed.
 */
void ac_wallet_free(struct AcWallet *wallet);

/**
 * # Safety
 * `base_url` must be a nul-terminated string; `out` must be writable.
 */
enum AcStatus ac_client_new(const char *base_url, struct AcClient **out);

/**
 * # Safety
 * `client` must be null or a handle from this library, not yet freed.
 */
void ac_client_free(struct AcClient *client);

/**
 * Publish the wallet's DID document with `role`. Privileged roles need
 * open registration or an authority session on `client`.
 *
 * # Safety
 * `client` and `wallet` must be live handles; `out_json` must be writable.
 */
enum AcStatus ac_client_register(const struct AcClient *client,
                                 const struct AcWallet *wallet,
                                 enum AcRole role,
                                 char **out_json);

/**
 * Open a session as the wallet's DID by challenge and signature.
 *
 * # Safety
 * `client` and `wallet` must be live handles.
 */
enum AcStatus ac_client_login(struct AcClient *client, const struct AcWallet *wallet);

/**
 * Open an attestation request; `template_id` may be null.
 *
 * # Safety
 * String arguments must be nul-terminated; `client` a live handle with a
 * holder session; `out_json` writable.
 */
enum AcStatus ac_client_submit_request(const struct AcClient *client,
                                       const char *document_id,
                                       const char *destination_country,
                                       const char *template_id,
                                       char **out_json);

/**
 * Record one phase. `step_json` is
 * `{"phase_number":N,"claims":{...},"policy_refs":[...]}`. The wallet signs.
 *
 * # Safety
 * String arguments must be nul-terminated; handles live; `out_json` writable.
 */
enum AcStatus ac_client_record_step(const struct AcClient *client,
                                    const struct AcWallet *wallet,
                                    const char *request_id,
                                    const char *step_json,
                                    char **out_json);

/**
 * # Safety
 * String arguments must be nul-terminated; handles live; `out_json` writable.
 */
enum AcStatus ac_client_finalize(const struct AcClient *client,
                                 const struct AcWallet *wallet,
                                 const char *request_id,
                                 char **out_json);

/**
 * `reason` is a short identifier recorded on the chain.
 *
 * # Safety
 * String arguments must be nul-terminated; handles live; `out_json` writable.
 */
enum AcStatus ac_client_revoke(const struct AcClient *client,
                               const struct AcWallet *wallet,
                               const char *request_id,
                               const char *reason,
                               char **out_json);

/**
 * Public timeline of a document; `destination_country` may be null.
 *
 * # Safety
 * String arguments must be nul-terminated; `client` live; `out_json` writable.
 */
enum AcStatus ac_client_status(const struct AcClient *client,
                               const char *document_id,
                               const char *destination_country,
                               char **out_json);

/**
 * Fetch every chain for a document and verify it against keys resolved
 * from the gateway's registry. Writes the first failing report, or
 * `{"valid":true}`, to `out_json`.
 *
 * # Safety
 * String arguments must be nul-terminated; `client` live; `out_json` writable.
 */
enum AcStatus ac_client_verify_chains(const struct AcClient *client,
                                      const char *document_id,
                                      char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* ATTESTCHAIN_H */
