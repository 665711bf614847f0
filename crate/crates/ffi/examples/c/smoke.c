#include <stdio.h>
#include "latplan.h"

int main(void) {
  LpCorpus *corpus = NULL;
  LpModel *model = NULL;
  double xy[12];
  size_t written = 0;
  char msg[128];

  if (lp_corpus_generate(2, LP_DIFFICULTY_EASY, 1, &corpus) != LP_STATUS_OK) return 1;
  if (lp_model_new_default(2, &model) != LP_STATUS_OK) return 2;
  if (lp_model_plan(model, corpus, 0, xy, 12, &written) != LP_STATUS_OK || written != 12) return 3;
  if (lp_model_plan(model, corpus, 0, xy, 2, &written) != LP_STATUS_BUFFER_TOO_SMALL) return 4;
  lp_last_error_message(msg, sizeof msg);
  printf("%s %zu %.3f %.3f\n", lp_version(), written, xy[10], xy[11]);
  printf("error: %s\n", msg);
  lp_model_free(model);
  lp_corpus_free(corpus);
  return 0;
}
