#include <stdio.h>
#include <stdlib.h>
#include <string.h>

#include "pbl.h"

#define CHECK(cond)                                                    \
    do {                                                               \
        if (!(cond)) {                                                 \
            char msg[512] = {0};                                       \
            pbl_last_error(msg, sizeof msg);                           \
            fprintf(stderr, "%s:%d: %s (%s)\n", __FILE__, __LINE__, #cond, msg); \
            return 1;                                                  \
        }                                                              \
    } while (0)

int main(void) {
    PblWorld *world = NULL;
    CHECK(pbl_world_new(3, 1, &world) == PBL_STATUS_OK);
    CHECK(pbl_world_create_ledger(world, 0) == PBL_STATUS_OK);

    const char *chaincode = "balance";
    const char *payloads[] = {"+100", "-30", "+5"};
    for (int i = 0; i < 3; i++) {
        uint64_t committed = 0;
        PblStatus st = pbl_world_submit(world, 0, chaincode, (const uint8_t *)payloads[i],
                                        strlen(payloads[i]), &committed);
        CHECK(st == PBL_STATUS_OK);
    }
    size_t blocks = 0;
    CHECK(pbl_world_advance(world, 60000) == PBL_STATUS_OK);
    CHECK(pbl_world_tick(world, 0, &blocks) == PBL_STATUS_OK);

    uint64_t height = 0;
    CHECK(pbl_world_read(world, 0, &height) == PBL_STATUS_OK);

    size_t needed = 0;
    CHECK(pbl_world_export(world, 0, NULL, 0, &needed) == PBL_STATUS_BUFFER_TOO_SMALL);
    uint8_t *file = malloc(needed);
    CHECK(pbl_world_export(world, 0, file, needed, &needed) == PBL_STATUS_OK);
    pbl_world_free(world);

    PblAudit *audit = NULL;
    CHECK(pbl_audit(file, needed, &audit) == PBL_STATUS_OK);
    CHECK(pbl_audit_count(audit) == 0);
    CHECK(pbl_audit_height(audit) == height);
    pbl_audit_free(audit);

    /* flip the last byte: the tip block's user signature */
    file[needed - 1] ^= 0x01;
    CHECK(pbl_audit(file, needed, &audit) == PBL_STATUS_OK);
    CHECK(pbl_audit_count(audit) > 0);
    PblFinding finding;
    char text[256];
    size_t len = 0;
    CHECK(pbl_audit_finding(audit, 0, &finding, text, sizeof text, &len) == PBL_STATUS_OK);
    CHECK(finding.height == height);
    printf("height=%llu finding=%s status=%s\n", (unsigned long long)height, text,
           pbl_status_name(PBL_STATUS_INVALID));
    pbl_audit_free(audit);
    free(file);
    return 0;
}
