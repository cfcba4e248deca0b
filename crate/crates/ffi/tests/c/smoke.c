/* Links against libkrein_ffi and drives one cheap 1D spectrum run. */
#include <math.h>
#include <stdio.h>
#include <string.h>

#include "krein.h"

#define CHECK(cond)                                                        \
  do {                                                                     \
    if (!(cond)) {                                                         \
      const char *e = krein_last_error();                                  \
      fprintf(stderr, "line %d: %s (%s)\n", __LINE__, #cond, e ? e : "-"); \
      return 1;                                                            \
    }                                                                      \
  } while (0)

static const char *CONFIG =
    "name = \"c-smoke\"\n"
    "model = \"gp1d\"\n"
    "state = \"dark-soliton\"\n"
    "solitons = 1\n"
    "omega = 1.0\n"
    "mu = 2.0\n"
    "[grid]\n"
    "n = 300\n"
    "dx = 0.05\n";

int main(int argc, char **argv) {
  CHECK(argc == 2);
  CHECK(strlen(krein_version()) > 0);

  double re, im;
  CHECK(krein_map_z(-0.09, 0.0, &re, &im) == KREIN_STATUS_OK);
  CHECK(fabs(re - 0.3) < 1e-15 && fabs(im) < 1e-15);

  KreinScenario *s = NULL;
  CHECK(krein_scenario_from_preset("no-such-preset", &s) == KREIN_STATUS_CONFIG);
  CHECK(s == NULL && krein_last_error() != NULL);

  CHECK(krein_scenario_from_toml(CONFIG, &s) == KREIN_STATUS_OK);
  CHECK(krein_scenario_set_output(s, argv[1]) == KREIN_STATUS_OK);
  KreinRun *run = NULL;
  CHECK(krein_run_spectrum(s, &run) == KREIN_STATUS_OK);

  KreinCounts c;
  CHECK(krein_report_counts(run, 0, &c) == KREIN_STATUS_OK);
  CHECK(c.k_ham == 2 && c.k_r == 0 && c.k_c == 0 && c.k_i_minus == 1 && c.identity_holds == 1);
  KreinVerdict v;
  CHECK(krein_run_verdict(run, &v) == KREIN_STATUS_OK && v == KREIN_VERDICT_PASSED);

  char *json = NULL;
  CHECK(krein_report_json(run, 0, &json) == KREIN_STATUS_OK);
  CHECK(strstr(json, "\"k_ham\":2") != NULL);
  krein_string_free(json);

  krein_run_free(run);
  krein_scenario_free(s);
  printf("ok\n");
  return 0;
}
