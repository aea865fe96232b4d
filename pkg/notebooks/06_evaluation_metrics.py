"""
Scoring a run
=============

Answers are judged against gold answers. Running both paths for every query
gives the paired outcomes behind the counterfactual matrix and the unverifiable
omission rate. The router's token share is computed from the per-query sums.
"""

import numpy as np

from tiered_memory import Engine, EngineConfig, Gateway, MockBackend, RoutingRecord, demo
from tiered_memory.evaluation import compute_metrics, counterfactual_matrix, overhead_shares, two_path_run

engine = Engine(EngineConfig(), Gateway(MockBackend(demo.script())))
engine.ingest(demo.SESSION, demo.transcript())
records = two_path_run(engine, demo.questions())
m = compute_metrics(records)
print(f"accuracy {m.accuracy:.2f}  r_rate {m.r_rate:.2f}  uor {m.uor:.2f}")
print("per category:", m.per_category)

tok = np.array([[r.tok_qa_in, r.tok_router_in, r.tok_gen_out, r.tok_router_out] for r in records], float)
share_in, share_total = overhead_shares(*tok.mean(axis=0))
print(f"router share of input tokens {share_in:.1%}, of all tokens {share_total:.1%}")

# the matrix on a larger synthetic escalated set
cells = {(True, True): 240, (True, False): 33, (False, True): 181, (False, False): 86}
synthetic = [RoutingRecord("q", "?", "R", "", s_correct=s, r_correct=r)
             for (s, r), n in cells.items() for _ in range(n)]
cm = counterfactual_matrix(synthetic)
print(f"repair {cm.repair_rate:.1%}  regress {cm.regress_rate:.1%}")
