import math

import numpy as np
import pytest

from rawdegrade.noise import (
    CLEAN,
    InsufficientDataError,
    NoiseProfile,
    NoiseProfileError,
    ProfileRegistry,
    add_shot_read_noise,
    estimate_profile,
    estimate_profile_from_flats,
    format_profile_line,
    read_registry,
    sample_profile,
    write_registry,
)
from rawdegrade.raw_core import RawImage


def flat(value, n=250_000):
    # 4 planes x 500 x 500 = 10**6 samples for n=250_000
    side = int(math.isqrt(n))
    return RawImage(np.full((4, side, side), float(value)))


def test_clean_profile_is_identity(scene, rng):
    assert add_shot_read_noise(scene, CLEAN, rng).planes is scene.planes


def test_variance_and_mean_monte_carlo():
    out = add_shot_read_noise(flat(0.5), NoiseProfile(1e-4, 1e-3), np.random.default_rng(1)).planes
    assert out.size == 10**6
    assert abs(out.var() - 6.0e-4) / 6.0e-4 < 0.02
    assert abs(out.mean() - 0.5) < 1e-4


def test_read_noise_floor():
    out = add_shot_read_noise(flat(0.0), NoiseProfile(4e-4, 3e-2), np.random.default_rng(2)).planes
    assert abs(out.var() - 4e-4) / 4e-4 < 0.02


@pytest.mark.parametrize("x", [0.1, 0.3, 0.9])
def test_unbiased_and_linear_variance(x):
    prof = NoiseProfile(2e-5, 4e-3)
    out = add_shot_read_noise(flat(x), prof, np.random.default_rng(3)).planes
    sigma = math.sqrt(prof.variance(x))
    assert abs(out.mean() - x) < 3 * sigma / math.sqrt(out.size)
    assert abs(out.var() - prof.variance(x)) / prof.variance(x) < 0.02


def test_noise_not_clipped_and_deterministic():
    prof = NoiseProfile(1e-2, 0.0)
    a = add_shot_read_noise(flat(0.0, 10_000), prof, np.random.default_rng(4)).planes
    b = add_shot_read_noise(flat(0.0, 10_000), prof, np.random.default_rng(4)).planes
    assert a.min() < 0
    np.testing.assert_array_equal(a, b)


def test_profile_validation():
    with pytest.raises(NoiseProfileError):
        NoiseProfile(-1e-4, 0.0)
    with pytest.raises(NoiseProfileError):
        NoiseProfile(0.0, float("nan"))
    with pytest.raises(NoiseProfileError):
        ProfileRegistry(())
    with pytest.raises(NoiseProfileError):
        ProfileRegistry(shot_range=(1e-2, 1e-4))


def test_single_profile_registry(rng):
    p = NoiseProfile(1e-5, 1e-3, "one")
    reg = ProfileRegistry.single(p)
    assert all(sample_profile(reg, rng) == p for _ in range(50))


def test_sample_profile_deterministic():
    reg = ProfileRegistry()
    a = [sample_profile(reg, r) for r in [np.random.default_rng(8)] for _ in range(30)]
    b = [sample_profile(reg, r) for r in [np.random.default_rng(8)] for _ in range(30)]
    assert a == b
    assert any(p.label == "log-uniform" for p in a) and any(p.label != "log-uniform" for p in a)


def test_log_uniform_median():
    reg = ProfileRegistry(shot_range=(1e-4, 1e-2), read_range=(1e-6, 1e-4), stored_prob=0.0)
    rng = np.random.default_rng(21)
    logs = np.log([sample_profile(reg, rng).lambda_shot for _ in range(10_000)])
    mid = 0.5 * (math.log(1e-4) + math.log(1e-2))
    assert abs(np.median(logs) - mid) < 0.05 * abs(mid)
    assert logs.min() >= math.log(1e-4) and logs.max() <= math.log(1e-2)


def test_estimate_exact_line():
    m = np.linspace(0.05, 0.95, 7)
    fit = estimate_profile(m, 2e-4 + 5e-3 * m)
    assert abs(fit.profile.lambda_read - 2e-4) < 1e-9
    assert abs(fit.profile.lambda_shot - 5e-3) < 1e-9
    assert not fit.clamped


def test_estimate_homoscedastic():
    m = np.linspace(0.1, 0.9, 5)
    fit = estimate_profile(m, np.full(5, 3e-4))
    assert fit.profile.lambda_read == pytest.approx(3e-4, abs=1e-12)
    assert fit.profile.lambda_shot == pytest.approx(0.0, abs=1e-12)


def test_estimate_clamps_negative_slope():
    m = np.array([0.1, 0.5, 0.9])
    fit = estimate_profile(m, np.array([3e-4, 2e-4, 1e-4]))
    assert fit.clamped and fit.profile.lambda_shot == 0.0
    assert fit.profile.lambda_read == pytest.approx(2e-4)


def test_estimate_clamps_negative_intercept():
    m = np.array([0.2, 0.5, 0.9])
    fit = estimate_profile(m, 2e-3 * m - 1e-4)
    assert fit.clamped and fit.profile.lambda_read == 0.0 and fit.profile.lambda_shot > 0


def test_estimate_errors():
    with pytest.raises(InsufficientDataError):
        estimate_profile([0.1, 0.2], [1e-4, 2e-4])
    with pytest.raises(InsufficientDataError, match="rank-deficient"):
        estimate_profile([0.3, 0.3, 0.3], [1e-4, 2e-4, 1e-4])
    with pytest.raises(NoiseProfileError):
        estimate_profile([0.1, 0.2, 0.3], [1e-4, -1e-4, 1e-4])


def test_closed_loop_from_flats():
    truth = NoiseProfile(1e-4, 1e-3)
    rng = np.random.default_rng(99)
    levels = np.linspace(0.05, 0.95, 10)
    patches = [add_shot_read_noise(RawImage(np.full((4, 125, 200), x)), truth, rng).planes for x in levels]
    assert patches[0].size == 10**5
    fit = estimate_profile_from_flats(patches).profile
    assert abs(fit.lambda_read - 1e-4) / 1e-4 < 0.10
    assert abs(fit.lambda_shot - 1e-3) / 1e-3 < 0.10


def test_registry_file_round_trip(tmp_path):
    profs = [NoiseProfile(1e-5, 2e-3, "imx600/iso100"), NoiseProfile(3e-5, 4e-3, "imx333/iso800")]
    path = tmp_path / "reg.txt"
    write_registry(profs, path)
    path.write_text(path.read_text() + "\n# trailing comment\n")
    reg = read_registry(path)
    assert list(reg.profiles) == profs
    assert not reg.has_ranges
    assert format_profile_line(profs[0]) == "imx600/iso100 1e-05 0.002"


def test_registry_file_errors(tmp_path):
    path = tmp_path / "reg.txt"
    path.write_text("only-two 1e-4\n")
    with pytest.raises(NoiseProfileError, match=":1:"):
        read_registry(path)
    path.write_text("a x y\n")
    with pytest.raises(NoiseProfileError):
        read_registry(path)
