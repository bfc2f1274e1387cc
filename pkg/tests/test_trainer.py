import jax
import jax.numpy as jnp
import numpy as np
import pytest

from neuralvmc import hamiltonian, network, trainer
from neuralvmc.network import NetworkHyperparams
from neuralvmc.trainer import LearningCurve, TrainConfig


def hydrogenic_network(h_atom):
    """Network params that realize exactly exp(-|r|) on the H atom."""
    hp = NetworkHyperparams(n_layers=2, width_one=8, width_two=4, n_det=1)
    wf = network.make_wavefunction(h_atom, hp)
    params = wf.init(0)
    params["orbitals"]["up"]["w"] = jnp.zeros_like(params["orbitals"]["up"]["w"])
    params["orbitals"]["up"]["g"] = jnp.ones_like(params["orbitals"]["up"]["g"])
    return wf, params


def synthetic_curve(energy: np.ndarray) -> LearningCurve:
    n = len(energy)
    return LearningCurve(
        steps=np.arange(n, dtype=np.int64),
        energy=np.asarray(energy, dtype=np.float64),
        variance=np.zeros(n),
        acceptance=np.full(n, 0.5),
        walltime_ms=np.ones(n),
    )


class TestEnergyAndGrad:
    def test_constant_local_energy_gives_zero_grad(self, h_atom):
        # exp(-|r|) is an eigenfunction: E_L = -0.5 everywhere, so the
        # covariance gradient vanishes identically.
        wf, params = hydrogenic_network(h_atom)
        walkers = jnp.asarray(np.random.default_rng(0).standard_normal((16, 1, 3)))
        energy, grad = trainer.energy_and_grad(wf, params, walkers)
        np.testing.assert_allclose(energy, -0.5, atol=1e-12)
        for leaf in jax.tree_util.tree_leaves(grad):
            np.testing.assert_allclose(np.asarray(leaf), 0.0, atol=1e-12)

    def test_duplicated_batch_gives_identical_estimates(self, h2, small_hp):
        wf = network.make_wavefunction(h2, small_hp)
        params = wf.init(1)
        walkers = jnp.asarray(np.random.default_rng(2).standard_normal((8, 2, 3)))
        doubled = jnp.concatenate([walkers, walkers], axis=0)
        e1, g1 = trainer.energy_and_grad(wf, params, walkers)
        e2, g2 = trainer.energy_and_grad(wf, params, doubled)
        np.testing.assert_allclose(e1, e2, rtol=1e-12)
        for a, b in zip(jax.tree_util.tree_leaves(g1), jax.tree_util.tree_leaves(g2)):
            np.testing.assert_allclose(np.asarray(a), np.asarray(b), atol=1e-12)

    def test_gradient_matches_surrogate_finite_difference(self, h2, small_hp):
        # On a frozen batch the gradient must be exactly the gradient of
        # sum_b w_b log|psi_b| with fixed clipped-deviation weights.
        wf = network.make_wavefunction(h2, small_hp)
        params = wf.init(3)
        walkers = jnp.asarray(np.random.default_rng(4).standard_normal((12, 2, 3)))
        _, grad = trainer.energy_and_grad(wf, params, walkers, clip_width=5.0)

        le = hamiltonian.local_energy(lambda p: wf.log_abs(params, p), walkers, h2)
        e_l = np.asarray(le.total)
        med = np.median(e_l)
        mad = np.median(np.abs(e_l - med))
        clipped = np.clip(e_l, med - 5.0 * mad, med + 5.0 * mad)
        weights = jnp.asarray((2.0 / len(e_l)) * (clipped - clipped.mean()))

        leaves, treedef = jax.tree_util.tree_flatten(params)
        keys = jax.random.split(jax.random.PRNGKey(5), len(leaves))
        direction = [jax.random.normal(k, leaf.shape) for k, leaf in zip(keys, leaves)]
        norm = float(jnp.sqrt(sum(jnp.sum(d**2) for d in direction)))
        direction = jax.tree_util.tree_unflatten(treedef, [d / norm for d in direction])

        def surrogate(p):
            logs = jax.vmap(lambda x: wf.log_abs(p, x))(walkers)
            return float(jnp.sum(weights * logs))

        eps = 1e-5
        shift = lambda s: jax.tree_util.tree_map(lambda p, d: p + s * d, params, direction)
        fd = (surrogate(shift(eps)) - surrogate(shift(-eps))) / (2 * eps)
        dot = sum(
            float(jnp.sum(g * d))
            for g, d in zip(jax.tree_util.tree_leaves(grad), jax.tree_util.tree_leaves(direction))
        )
        np.testing.assert_allclose(dot, fd, rtol=1e-5, atol=1e-10)

    def test_nonfinite_batch_aborts(self, h_atom, small_hp):
        wf = network.make_wavefunction(h_atom, small_hp)
        params = wf.init(6)
        walkers = np.random.default_rng(7).standard_normal((8, 1, 3))
        walkers[:2] = 0.0  # electrons exactly on the nucleus
        with pytest.raises(trainer.TrainingError, match="non-finite"):
            trainer.energy_and_grad(wf, params, jnp.asarray(walkers))


class TestAdam:
    def test_bias_corrected_first_step(self):
        params = {"w": jnp.asarray([1.0, -2.0])}
        grads = {"w": jnp.asarray([0.5, -0.25])}
        state = trainer.adam_init(params)
        new, _ = trainer.adam_update(params, grads, state, lr=0.1)
        # first Adam step moves every coordinate by lr * sign(grad)
        np.testing.assert_allclose(
            np.asarray(new["w"]), [1.0 - 0.1, -2.0 + 0.1], rtol=1e-6
        )


class TestTrain:
    def test_zero_iterations(self, h_atom, small_hp):
        tc = TrainConfig(n_iterations=0, batch_size=8, seed=0)
        params, curve = trainer.train(h_atom, small_hp, tc)
        assert len(curve) == 0
        ref = network.init_params(h_atom, small_hp, seed=0)
        for a, b in zip(jax.tree_util.tree_leaves(params), jax.tree_util.tree_leaves(ref)):
            np.testing.assert_array_equal(np.asarray(a), np.asarray(b))

    def test_determinism(self, h_atom, small_hp):
        tc = TrainConfig(n_iterations=8, batch_size=16, burn_in_steps=20, seed=5)
        _, curve_a = trainer.train(h_atom, small_hp, tc)
        _, curve_b = trainer.train(h_atom, small_hp, tc)
        np.testing.assert_array_equal(curve_a.energy, curve_b.energy)
        np.testing.assert_array_equal(curve_a.acceptance, curve_b.acceptance)

    def test_curve_shape_and_checkpoint(self, tmp_path, h_atom, small_hp):
        tc = TrainConfig(n_iterations=6, batch_size=16, burn_in_steps=10, seed=1,
                         checkpoint_every=5)
        params, curve = trainer.train(h_atom, small_hp, tc, out_dir=str(tmp_path))
        assert len(curve) == 6
        assert np.all(np.diff(curve.steps) == 1)
        assert np.all(curve.variance >= 0)
        loaded, meta = network.load_checkpoint(tmp_path / "checkpoint.npz")
        assert meta["seed"] == 1
        wf = network.make_wavefunction(h_atom, small_hp)
        pos = jnp.asarray(np.random.default_rng(2).standard_normal((1, 3)))
        assert float(wf.log_abs(params, pos)) == float(wf.log_abs(loaded, pos))

    def test_convergence_stops_early(self, h_atom, small_hp):
        # A threshold wider than any possible fluctuation makes the window
        # test fire at the first eligible iteration.
        tc = TrainConfig(n_iterations=50, batch_size=8, burn_in_steps=5, seed=2,
                         convergence_threshold=1e6, convergence_window=5)
        _, curve = trainer.train(h_atom, small_hp, tc)
        assert len(curve) == 10

    def test_divergence_aborts(self, h_atom, small_hp):
        tc = TrainConfig(n_iterations=200, batch_size=8, burn_in_steps=5, seed=3,
                         learning_rate=150.0, clip_width=100.0)
        with pytest.raises(trainer.TrainingError):
            trainer.train(h_atom, small_hp, tc)

    def test_invalid_config(self):
        with pytest.raises(ValueError):
            TrainConfig(n_iterations=-1)
        with pytest.raises(ValueError):
            TrainConfig(n_iterations=1, clip_width=0.0)


class TestCurveCsv:
    def test_round_trip(self, tmp_path):
        curve = synthetic_curve(np.asarray([-0.1, -0.2, -0.3]))
        meta = {"seed": 9, "note": "abc"}
        path = tmp_path / "curve.csv"
        trainer.write_curve_csv(curve, path, metadata=meta)
        text = path.read_text().splitlines()
        assert text[1] == trainer.CURVE_CSV_HEADER
        loaded, loaded_meta = trainer.read_curve_csv(path)
        assert loaded_meta == meta
        np.testing.assert_array_equal(loaded.steps, curve.steps)
        np.testing.assert_array_equal(loaded.energy, curve.energy)
        np.testing.assert_array_equal(loaded.walltime_ms, curve.walltime_ms)

    def test_empty_curve(self, tmp_path):
        path = tmp_path / "empty.csv"
        trainer.write_curve_csv(LearningCurve.empty(), path)
        loaded, _ = trainer.read_curve_csv(path)
        assert len(loaded) == 0


class TestCurveEnergy:
    def test_constant_curve(self):
        curve = synthetic_curve(np.full(100, -1.25))
        mean, stderr = trainer.curve_energy(curve, 100)
        assert mean == -1.25
        assert stderr == 0.0

    def test_iid_gaussian_oracle(self):
        rng = np.random.default_rng(10)
        curve = synthetic_curve(-1.0 + 0.01 * rng.standard_normal(10_000))
        mean, stderr = trainer.curve_energy(curve, 10_000)
        assert stderr > 0
        assert abs(mean + 1.0) < 4 * stderr

    def test_correlated_series_inflates_stderr(self):
        # AR(1) series: blocking must report a larger error than the naive
        # i.i.d. formula.
        rng = np.random.default_rng(11)
        x = np.empty(8192)
        x[0] = 0.0
        for i in range(1, len(x)):
            x[i] = 0.95 * x[i - 1] + rng.standard_normal()
        curve = synthetic_curve(x)
        _, stderr = trainer.curve_energy(curve, 8192)
        naive = x.std(ddof=1) / np.sqrt(len(x))
        assert stderr > 2 * naive

    def test_window_validation(self):
        curve = synthetic_curve(np.zeros(10))
        with pytest.raises(ValueError, match="exceeds"):
            trainer.curve_energy(curve, 11)
        with pytest.raises(ValueError, match="window"):
            trainer.curve_energy(curve, 0)


class TestDetectConvergence:
    def test_constant_curve_converges_at_first_eligible_step(self):
        curve = synthetic_curve(np.full(20, -0.5))
        assert trainer.detect_convergence(curve, threshold=1e-6, window=5) == 9

    def test_linear_drift_never_converges(self):
        window, threshold = 10, 1e-3
        slope = 2 * threshold / window  # drift too steep to ever pass
        curve = synthetic_curve(-1.0 + slope * np.arange(200))
        assert trainer.detect_convergence(curve, threshold, window) is None

    def test_faster_decay_converges_sooner(self):
        rng = np.random.default_rng(12)
        noise = 1e-5 * rng.standard_normal(4000)
        t = np.arange(4000)
        slow = synthetic_curve(-1.0 + 0.5 * np.exp(-t / 800.0) + noise)
        fast = synthetic_curve(-1.0 + 0.5 * np.exp(-t / 100.0) + noise)
        s = trainer.detect_convergence(slow, threshold=1e-3, window=50)
        f = trainer.detect_convergence(fast, threshold=1e-3, window=50)
        assert s is not None and f is not None
        assert f < s

    def test_short_curve_returns_none(self):
        curve = synthetic_curve(np.zeros(5))
        assert trainer.detect_convergence(curve, threshold=1.0, window=5) is None

    def test_window_validation(self):
        with pytest.raises(ValueError, match="window"):
            trainer.detect_convergence(synthetic_curve(np.zeros(10)), 1e-3, window=1)
