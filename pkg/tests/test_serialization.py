import json

import numpy as np

from bdwalk import bdp, walk as wk
from bdwalk.environment import InitDistSpec


class TestJsonContracts:
    def test_params_round_trip(self):
        p = bdp.validate_params([0.4, 0.2], 0.2)
        blob = json.dumps(p.to_json_dict())
        q = bdp.BDParams.from_json_dict(json.loads(blob))
        assert q.table == p.table and q.tail == p.tail

    def test_dist_table_shape(self):
        nu = bdp.stationary_distribution(bdp.validate_params([0.3], 0.3))
        d = nu.to_json_dict()
        assert set(d) == {"weights", "tail_mass"}
        assert abs(sum(d["weights"]) + d["tail_mass"] - 1.0) < 1e-9

    def test_rate_function_round_trip(self):
        phi = bdp.make_rate_function((1.0, 0.6), 0.5)
        d = phi.to_json_dict()
        again = bdp.make_rate_function(d["table"], d["tail"])
        assert again.values == phi.values and again.tail == phi.tail

    def test_step_law_round_trip(self):
        pi = wk.JumpDistribution([[1, 0], [-1, 0], [0, 2]], [0.4, 0.4, 0.2])
        again = wk.JumpDistribution.from_json_value(pi.to_json_value())
        assert np.array_equal(again.vectors, pi.vectors)
        assert np.allclose(again.probs, pi.probs)

    def test_init_spec_round_trip(self):
        for spec in (InitDistSpec.zero(), InitDistSpec.stationary(),
                     InitDistSpec.product_table([0.6, 0.4], c=2.0, beta=0.5)):
            again = InitDistSpec.from_json_value(spec.to_json_value())
            assert again.kind == spec.kind
            assert again.table == spec.table
