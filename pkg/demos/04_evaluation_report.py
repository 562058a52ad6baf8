"""
Evaluation diagnostics
======================

Roll a few first-turn choosers through fresh episodes and compare accuracy,
token ratio, and the call and region decisions side by side.
"""

from cropcall.config import RunConfig
from cropcall.experiment import fit_reference, run_grpo
from cropcall.metrics import agreement_from_matrix, eval_report, format_table
from cropcall.sim_env import EnvConfig, always_all, never_call, oracle_chooser, policy_chooser, rollout_records

env = EnvConfig()
cfg = RunConfig()
policy, _ = run_grpo(cfg, fit_reference(cfg, seed=0), seed=0)

choosers = {
    "never-call": never_call,
    "always-all": always_all,
    "oracle": oracle_chooser,
    "grpo": policy_chooser(policy),
}
reports = {name: eval_report(rollout_records(env, choose, 5000, seed=11)) for name, choose in choosers.items()}
print(format_table(reports))

# agreement between two labelers from a 2x2 percentage matrix
print(agreement_from_matrix([[78.01, 1.39], [1.73, 18.87]]))
