import numpy as np
import pytest

from netcash import data as D
from netcash.context import Budget
from netcash.errors import ValidationError
from netcash.synth import (CLUSTER, EXPERIMENTS, HOST, LATENCY, VM, VNET, SynthConfig, cluster_bases, generate,
                           run_experiment, run_ladder, vnet_host_features)


def test_generation_is_seeded():
    a, b, c = generate(SynthConfig(seed=1)), generate(SynthConfig(seed=1)), generate(SynthConfig(seed=2))
    assert a.equals(b) and not a.equals(c)


def test_cluster_bases_span_the_ratio():
    bases = cluster_bases(SynthConfig(base_latency_low=100, base_ratio=5, n_clusters=4))
    assert bases[0] == 100 and bases[-1] == pytest.approx(500)
    assert np.all(np.diff(np.log(bases)) == pytest.approx(np.log(5) / 3))


def test_latency_without_noise_follows_the_generator():
    cfg = SynthConfig(noise_sd=0, n_clusters=3, seed=5)
    t = generate(cfg)
    bases = dict(zip([f"c{i:02d}" for i in range(3)], cluster_bases(cfg)))
    sizes = {}
    for c, v in zip(t.column(CLUSTER), t.column(VNET)):
        sizes[(c, v)] = sizes.get((c, v), 0) + 1
    host_effect = {}
    for c, v, h, y in zip(t.column(CLUSTER), t.column(VNET), t.column(HOST), t.column(LATENCY)):
        eff = y - bases[c] - cfg.alpha * sizes[(c, v)]
        assert 0 <= eff <= 0.25 * bases[c] + 1e-9
        assert host_effect.setdefault((c, h), eff) == pytest.approx(eff)  # one effect per host


def test_row_counts_and_labels():
    cfg = SynthConfig(n_clusters=4, vnets_per_cluster=3, vms_per_vnet=(2, 2), vm_name_entropy=2)
    t = generate(cfg)
    assert t.row_count == 4 * 3 * 2
    assert all(len(v) == 5 and v.startswith("vm-") for v in t.column(VM))
    assert t.schema.group_key == CLUSTER and t.schema.entity_key == VM


def test_config_validation():
    with pytest.raises(ValidationError):
        SynthConfig(base_ratio=1.0)
    with pytest.raises(ValidationError):
        SynthConfig(vms_per_vnet=(5, 2))
    with pytest.raises(ValidationError):
        SynthConfig(n_clusters=0)


def test_vnet_host_features_mark_member_hosts():
    t = generate(SynthConfig(n_clusters=2, seed=0))
    f = vnet_host_features(t)
    for i in range(t.row_count):
        c, v = t.column(CLUSTER)[i], t.column(VNET)[i]
        members = {h for cc, vv, h in zip(t.column(CLUSTER), t.column(VNET), t.column(HOST)) if (cc, vv) == (c, v)}
        for h in set(t.column(HOST)):
            assert f.column(f"vnet_host={h}")[i] == float(h in members)


def test_csv_round_trip(tmp_path):
    t = generate(SynthConfig(n_clusters=2))
    D.write_csv(t, tmp_path / "s.csv")
    assert D.load_csv(tmp_path / "s.csv", t.schema).equals(t)


@pytest.mark.parametrize("exp", EXPERIMENTS, ids=lambda e: f"exp{e.id}")
def test_every_experiment_runs(exp):
    score, fit_s, outcome = run_experiment(exp, generate(SynthConfig(n_clusters=6)), Budget(3, 60.0, 0))
    assert np.isfinite(score) and fit_s > 0
    assert outcome.constraints.partition_mode == ("per_group" if exp.partitioned else "pooled")


def test_ladder_needs_three_seeds():
    with pytest.raises(ValidationError):
        run_ladder(SynthConfig(), Budget(2, 10.0, 0), [0, 1])
