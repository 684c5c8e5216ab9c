from rotpsf.config import ExperimentConfig, config_from_dict, config_hash, config_to_dict
from rotpsf.experiment import image_seeds, run_cell, run_condition, summarize
from rotpsf.optics import OpticsConfig
from rotpsf.solver import SolverParams


def tiny_config() -> ExperimentConfig:
    return ExperimentConfig(
        optics=OpticsConfig(image_size=(32, 32), num_slices=5, pupil_grid=128),
        densities=(3,), n_train=1, n_test=2, base_seed=501,
        solvers={"kl-nc": SolverParams(mu=12.0, a=80.0, beta0=0.01, beta1=0.01,
                                       max_inner=120, background=5.0)},
    )


class TestSeeds:
    def test_deterministic_and_distinct(self):
        a = image_seeds(7, 15, 3, train=False)
        assert a == image_seeds(7, 15, 3, train=False)
        assert a != image_seeds(7, 15, 4, train=False)
        assert a != image_seeds(7, 15, 3, train=True)
        assert a != image_seeds(8, 15, 3, train=False)

    def test_train_and_test_streams_disjoint(self):
        train = {image_seeds(501, 15, i, True) for i in range(50)}
        test = {image_seeds(501, 15, i, False) for i in range(50)}
        assert not train & test


class TestRunCell:
    def test_deterministic(self):
        xcfg = tiny_config()
        a = run_cell(xcfg, "kl-nc", 3, 0)
        b = run_cell(xcfg, "kl-nc", 3, 0)
        assert a == b

    def test_parallel_matches_serial(self):
        xcfg = tiny_config()
        serial = run_condition(xcfg, "kl-nc", 3, 2, workers=1)
        parallel = run_condition(xcfg, "kl-nc", 3, 2, workers=2)
        assert serial == parallel

    def test_summarize_counts_failures(self):
        xcfg = tiny_config()
        outcomes = run_condition(xcfg, "kl-nc", 3, 2)
        summary = summarize(xcfg, "kl-nc", 3, outcomes)
        assert summary.n_images == 2
        assert summary.n_failed == 0
        assert 0.0 <= summary.post.mean_recall <= 1.0

    def test_perturbed_cell_differs(self):
        xcfg = tiny_config()
        clean = run_cell(xcfg, "kl-nc", 3, 0, sigma=0.0)
        noisy = run_cell(xcfg, "kl-nc", 3, 0, sigma=0.5)
        assert clean.scene_seed == noisy.scene_seed  # paired scenes
        assert clean != noisy


class TestConfigRoundTrip:
    def test_json_round_trip_preserves_hash(self):
        xcfg = tiny_config()
        back = config_from_dict(config_to_dict(xcfg))
        assert config_hash(back) == config_hash(xcfg)
        assert back.optics == xcfg.optics
        assert back.solvers == xcfg.solvers

    def test_default_solvers_populated(self):
        xcfg = ExperimentConfig()
        assert set(xcfg.solvers) == {"kl-nc", "kl-l1", "l2-l1", "l2-nc"}
        assert xcfg.params_for("l2-l1").datafit == "ls"
        assert xcfg.params_for("kl-l1").regularizer == "l1"
