#include <stdio.h>
#include <string.h>
#include "sentibert.h"

int main(int argc, char **argv) {
    if (argc != 3) return 2;
    SbVocab *vocab = NULL;
    SbModel *model = NULL;
    if (sb_vocab_load(argv[1], &vocab) != SB_STATUS_OK) return 3;
    if (sb_model_load(argv[2], &model) != SB_STATUS_OK) return 4;

    uint32_t ids[16];
    uint8_t mask[16];
    size_t real = 0;
    if (sb_encode(vocab, "quán ngon", 16, ids, mask, &real) != SB_STATUS_OK) return 5;

    int32_t label = -2;
    double p = -1.0;
    if (sb_model_predict(model, vocab, "quán ngon", &label, &p) != SB_STATUS_OK) return 6;

    int32_t rule_label = 7;
    sb_label_score(SB_RULE_NTC_SV, 9.0, &rule_label);

    uint8_t gold[4] = {1, 1, 0, 0};
    uint8_t pred[4] = {1, 0, 1, 0};
    SbMetrics m;
    sb_metrics(gold, pred, 4, &m);

    SbStatus bad = sb_model_load("/nonexistent/model.ck", &model);
    const char *msg = sb_last_error_message();

    printf("version=%s real=%zu label=%d p=%.6f rule=%d f1=%.3f bad=%d msg=%s\n",
           sb_version(), real, label, p, rule_label, m.f1, (int)bad, msg ? "yes" : "no");
    sb_model_free(model);
    sb_vocab_free(vocab);
    return 0;
}
