#include <stdio.h>
#include <stdint.h>
#include "arp.h"

int main(void) {
    struct ArpProblem *problem = NULL;
    struct ArpConfig *config = NULL;
    struct ArpRunResult *result = NULL;
    if (arp_problem_new("quartic:6", NULL, &problem) != ARP_STATUS_OK) return 1;
    if (arp_problem_dim(problem) != 6) return 2;
    if (arp_config_parse("[algorithm]\nepsilon = 1e-3\nseed = 11\n", &config) != ARP_STATUS_OK) return 3;
    double x0[6] = {0.4, -1.3, 0.8, 1.9, -0.2, 0.6};
    if (arp_run(problem, config, x0, 6, &result) != ARP_STATUS_OK) return 4;
    if (arp_result_termination(result) != ARP_TERMINATION_CONVERGED) return 5;
    printf("converged at iteration %lld after %zu iterations, %llu derivative evals\n",
           (long long)arp_result_n_epsilon(result),
           arp_result_iterations(result),
           (unsigned long long)arp_result_deriv_evals(result));
    char *trace = arp_result_trace_json(result);
    if (!trace) return 6;
    printf("trace head: %.60s...\n", trace);
    arp_string_free(trace);
    double final_point[6];
    if (arp_result_final_point(result, final_point, 6) != ARP_STATUS_OK) return 7;
    printf("final x0 component: %f\n", final_point[0]);
    arp_result_free(result);
    arp_config_free(config);
    arp_problem_free(problem);
    /* error-path checks */
    struct ArpProblem *bad = NULL;
    if (arp_problem_new("nope", NULL, &bad) != ARP_STATUS_UNKNOWN_PROBLEM) return 8;
    char *msg = arp_last_error_message();
    if (!msg) return 9;
    printf("expected error: %s\n", msg);
    arp_string_free(msg);
    return 0;
}
