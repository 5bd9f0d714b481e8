#ifndef PBL_H
#define PBL_H

/* Generated by cbindgen from crates/ffi/src. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum PblCondition {
  PBL_CONDITION_GENESIS = 1,
  PBL_CONDITION_BLOCK = 2,
  PBL_CONDITION_CONNECTION = 3,
  PBL_CONDITION_SINGLE_GENESIS = 4,
  PBL_CONDITION_LEDGER_ADDRESS = 5,
  PBL_CONDITION_STRUCTURAL = 6,
} PblCondition;

/**
 * Result of every fallible call.
 */
typedef enum PblStatus {
  PBL_STATUS_OK = 0,
  /**
   * A required pointer was null.
   */
  PBL_STATUS_NULL_ARGUMENT = 1,
  /**
   * A string argument was not UTF-8.
   */
  PBL_STATUS_BAD_UTF8 = 2,
  /**
   * An argument was out of range or malformed.
   */
  PBL_STATUS_BAD_ARGUMENT = 3,
  /**
   * Input bytes are not a ledger file.
   */
  PBL_STATUS_DECODE = 4,
  /**
   * A ledger failed validation.
   */
  PBL_STATUS_INVALID = 5,
  /**
   * Providers did not answer.
   */
  PBL_STATUS_FAULT = 6,
  /**
   * A provider refused the request.
   */
  PBL_STATUS_REFUSED = 7,
  /**
   * The output buffer is too small; `*needed` holds the size.
   */
  PBL_STATUS_BUFFER_TOO_SMALL = 8,
  /**
   * The library panicked; the handle should be discarded.
   */
  PBL_STATUS_PANIC = 9,
} PblStatus;

/**
 * Result of auditing a ledger file.
 */
typedef struct PblAudit PblAudit;

/**
 * A simulated provider network and one user.
 */
typedef struct PblWorld PblWorld;

/**
 * A finding as plain data. `condition_index` is the numbered check for
 * genesis and block conditions and 0 otherwise.
 */
typedef struct PblFinding {
  uint64_t height;
  enum PblCondition condition;
  uint32_t condition_index;
} PblFinding;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Static name of a status code.
 */
const char *pbl_status_name(enum PblStatus status);

/**
 * Copies the calling thread's last error message. Returns the size
 * needed including the terminator; writes nothing when `cap` is smaller.
 *
 * # Safety
 * `buf` must be valid for `cap` bytes or null with `cap == 0`.
 */
size_t pbl_last_error(char *buf, size_t cap);

/**
 * Writes a seed phrase of `words` words drawn deterministically from `seed`.
 *
 * # Safety
 * `buf` must be valid for `cap` bytes; `needed` must be valid.
 */
enum PblStatus pbl_phrase_generate(uint64_t seed,
                                   uint32_t words,
                                   char *buf,
                                   size_t cap,
                                   size_t *needed);

/**
 * Writes the base58 address of ledger `index` under `phrase`.
 *
 * # Safety
 * `phrase` must be a NUL-terminated string; `buf` must be valid for `cap`
 * bytes; `needed` must be valid.
 */
enum PblStatus pbl_ledger_address(const char *phrase,
                                  uint64_t index,
                                  char *buf,
                                  size_t cap,
                                  size_t *needed);

/**
 * Audits a ledger file against the keys in its own genesis block.
 * Returns `PBL_STATUS_DECODE` when the bytes are not a ledger file at all;
 * a file that decodes but fails validation still yields an audit.
 *
 * # Safety
 * `bytes` must be valid for `len` bytes; `out` must be valid.
 */
enum PblStatus pbl_audit(const uint8_t *bytes, size_t len, struct PblAudit **out);

/**
 * # Safety
 * `audit` must come from [`pbl_audit`] and not be used afterwards.
 */
void pbl_audit_free(struct PblAudit *audit);

/**
 * Number of findings; zero means the ledger is valid.
 *
 * # Safety
 * `audit` must be a live handle or null.
 */
size_t pbl_audit_count(const struct PblAudit *audit);

/**
 * Tip height of the audited ledger, 0 if it did not decode as a ledger.
 *
 * # Safety
 * `audit` must be a live handle or null.
 */
uint64_t pbl_audit_height(const struct PblAudit *audit);

/**
 * Copies finding `i` and its text, formatted as
 * `block <h>: <condition>: <reason>`. `text` may be null with `cap == 0`
 * to query the size.
 *
 * # Safety
 * `audit` must be a live handle; `finding` and `needed` must be valid;
 * `text` must be valid for `cap` bytes.
 */
enum PblStatus pbl_audit_finding(const struct PblAudit *audit,
                                 size_t i,
                                 struct PblFinding *finding,
                                 char *text,
                                 size_t cap,
                                 size_t *needed);

/**
 * Builds a world with `m` providers of every kind. Provider keys,
 * provider selection and the user's phrase all derive from `seed`.
 *
 * # Safety
 * `out` must be valid.
 */
enum PblStatus pbl_world_new(uint64_t seed, uint32_t m, struct PblWorld **out);

/**
 * # Safety
 * `world` must come from [`pbl_world_new`] and not be used afterwards.
 */
void pbl_world_free(struct PblWorld *world);

/**
 * Creates the user's ledger number `index`.
 *
 * # Safety
 * `world` must be a live handle.
 */
enum PblStatus pbl_world_create_ledger(struct PblWorld *world, uint64_t index);

/**
 * Submits one transaction. `chaincode` may be null for a raw record.
 * `*committed` is the height of the block holding the transaction when it
 * was committed during the call, and 0 otherwise.
 *
 * # Safety
 * `world` must be a live handle; `payload` must be valid for `len` bytes;
 * `chaincode` must be null or NUL-terminated; `committed` may be null.
 */
enum PblStatus pbl_world_submit(struct PblWorld *world,
                                uint64_t index,
                                const char *chaincode,
                                const uint8_t *payload,
                                size_t len,
                                uint64_t *committed);

/**
 * Lets pending work time out and commit. `*committed` receives the number
 * of blocks committed.
 *
 * # Safety
 * `world` must be a live handle; `committed` may be null.
 */
enum PblStatus pbl_world_tick(struct PblWorld *world, uint64_t index, size_t *committed);

/**
 * Advances virtual time.
 *
 * # Safety
 * `world` must be a live handle.
 */
enum PblStatus pbl_world_advance(struct PblWorld *world, uint64_t ms);

/**
 * Reads the ledger from storage and validates it. Returns
 * `PBL_STATUS_INVALID` when the stored copy fails validation.
 *
 * # Safety
 * `world` must be a live handle; `height` may be null.
 */
enum PblStatus pbl_world_read(struct PblWorld *world, uint64_t index, uint64_t *height);

/**
 * Copies the user's local copy of the ledger as a ledger file.
 *
 * # Safety
 * `world` must be a live handle; `buf` must be valid for `cap` bytes;
 * `needed` must be valid.
 */
enum PblStatus pbl_world_export(struct PblWorld *world,
                                uint64_t index,
                                uint8_t *buf,
                                size_t cap,
                                size_t *needed);

/**
 * Sets the behavior of provider `id`: `healthy`, `silent`, `corrupt` or
 * `delayed <ms>`.
 *
 * # Safety
 * `world` must be a live handle; `id` and `mode` must be NUL-terminated.
 */
enum PblStatus pbl_world_fault(struct PblWorld *world, const char *id, const char *mode);

/**
 * Copies provider ids separated by newlines.
 *
 * # Safety
 * `world` must be a live handle; `buf` must be valid for `cap` bytes;
 * `needed` must be valid.
 */
enum PblStatus pbl_world_providers(struct PblWorld *world, char *buf, size_t cap, size_t *needed);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* PBL_H */
