import json

import numpy as np
import pytest

from amloda.billing import (
    PlpSchedule,
    TariffError,
    TouSchedule,
    bill,
    billing_invariance_check,
    frame_consumption,
    load_tariff,
    plp_bill,
    tariff_to_dict,
    tou_bill,
    tou_frames,
)
from amloda.data import PowerTrace
from amloda.gaussian import GaussianConfig, gaussian_perturb
from amloda.oblivious import NoiseSeries, apply_paired_perturbation, pair_starts


def paired(values, noise_w):
    trace = PowerTrace(values)
    starts = pair_starts(len(trace), 2)
    noise = NoiseSeries(starts, np.resize(np.asarray(noise_w, dtype=float), starts.size), len(trace))
    return trace, apply_paired_perturbation(trace, noise)


def test_frame_consumption():
    assert frame_consumption([1, 2, 3, 4], 2).tolist() == [3, 7]
    assert frame_consumption([1, 2, 3, 4], 4).tolist() == [10]
    assert frame_consumption([95, 105, 50, 50], 2).tolist() == [200, 100]


def test_frame_consumption_pad():
    with pytest.raises(TariffError):
        frame_consumption([1, 2, 3], 2)
    assert frame_consumption([1, 2, 3], 2, pad_zero=True).tolist() == [3, 3]


def test_tou_bill():
    assert tou_bill([3, 7], [2, 1]) == 13
    assert tou_bill([3, 7], [0, 0]) == 0
    assert tou_bill([200], [0.5]) == 100
    with pytest.raises(TariffError):
        tou_bill([1, 2], [1])


def test_tou_schedule_tiles_over_trace():
    sched = TouSchedule(((1, 2.0), (1, 1.0)))
    frames, rates = tou_frames([1, 2, 3, 4], sched)
    assert frames.tolist() == [1, 2, 3, 4]
    assert rates.tolist() == [2, 1, 2, 1]
    assert bill([1, 2, 3, 4], sched) == 2 + 2 + 6 + 4


def test_plp_bill():
    sched = PlpSchedule((100,), (1, 2), 1)
    assert plp_bill([50, 150], sched) == 350
    assert plp_bill([100], sched) == 200
    assert plp_bill([10, 20, 99], sched) == 129


def test_plp_rejects_bad_schedule():
    with pytest.raises(TariffError):
        PlpSchedule((100, 50), (1, 2, 3), 2)
    with pytest.raises(TariffError):
        PlpSchedule((100,), (1,), 2)


def test_plp_bill_monotone_in_consumption():
    sched = PlpSchedule((100, 200, 300), (1, 1.5, 2, 3), 1)
    m = np.linspace(0, 400, 801)
    costs = [plp_bill([x], sched) for x in m]
    assert all(b >= a for a, b in zip(costs, costs[1:]))


def test_invariance_amloda_frame_two():
    trace, pert = paired([100, 100, 80, 60], [5, -7])
    assert pert.values.tolist() == [95, 105, 87, 53]
    out = billing_invariance_check(trace, pert, TouSchedule(((2, 0.3), (2, 0.1))))
    assert out["invariant"] and out["delta"] == 0


def test_invariance_odd_frame_reported():
    trace, pert = paired([100, 100, 100, 100, 100, 100], [5])
    out = billing_invariance_check(trace, pert, TouSchedule(((3, 1.0), (3, 2.0))))
    # the pair (2, 3) straddles the frame boundary
    assert out["delta"] == pytest.approx(5.0)
    assert not out["invariant"]


def test_invariance_gaussian_delta_matches_noise():
    rng = np.random.default_rng(0)
    trace = PowerTrace(rng.uniform(200, 400, 600))
    pert = gaussian_perturb(trace, GaussianConfig(7.5, seed=3))
    rate = 0.25
    out = billing_invariance_check(trace, pert, TouSchedule(((60, rate),)))
    assert not out["invariant"]
    assert out["delta"] == pytest.approx(rate * (pert.values - trace.values).sum(), rel=1e-9)


def test_tariff_json_round_trip(tmp_path):
    for tariff in (TouSchedule(((3600, 0.2), (1800, 0.1))), PlpSchedule((1e5, 2e5), (1e-6, 2e-6, 4e-6), 3600)):
        path = tmp_path / "t.json"
        path.write_text(json.dumps(tariff_to_dict(tariff)))
        assert load_tariff(path) == tariff


def test_tariff_json_formats(tmp_path):
    path = tmp_path / "tou.json"
    path.write_text('{"type":"tou","frames":[{"len":2,"rate":1.5}]}')
    assert load_tariff(path) == TouSchedule(((2, 1.5),))
    path.write_text('{"type":"plp","frame_len":2,"thresholds":[10],"rates":[1,2]}')
    assert load_tariff(path) == PlpSchedule((10,), (1, 2), 2)
    path.write_text('{"type":"flat"}')
    with pytest.raises(TariffError):
        load_tariff(path)
