import math
import warnings
from dataclasses import replace

import pytest

from shapleyvic import mlp, rashomon
from shapleyvic.data import all_subsets
from shapleyvic.errors import ValidationError
from shapleyvic.mlp import MLPArch
from shapleyvic.rashomon import RashomonConfig


@pytest.fixture(scope="module")
def arrays(small_ds, small_split):
    x, y = small_ds.features, small_ds.outcome.astype(float)
    return (
        x[small_split.train_idx],
        y[small_split.train_idx],
        x[small_split.valid_idx],
        y[small_split.valid_idx],
    )


@pytest.fixture(scope="module")
def arch(small_ds):
    return MLPArch((small_ds.d, 16, 1))


@pytest.fixture(scope="module")
def optimal(arrays, arch, fast_cfg):
    return rashomon.train_optimal(*arrays, arch, fast_cfg)


@pytest.fixture(scope="module")
def seeds(arrays, arch, fast_cfg, optimal):
    rcfg = RashomonConfig(lambda_grid=(0, 1e-5, 1e-4, 1e-3), seeds_per_lambda=3)
    return rashomon.stage1_seeds(*arrays, arch, fast_cfg, rcfg, optimal.valid_loss)


class TestRashomonConfig:
    def test_grid_needs_zero(self):
        with pytest.raises(ValidationError):
            RashomonConfig(lambda_grid=(1e-3,))

    def test_default_grid(self):
        grid = RashomonConfig().lambda_grid
        assert len(grid) == 12 and grid[0] == 0
        assert grid[1] == pytest.approx(1e-6) and grid[-1] == pytest.approx(1e-1)

    @pytest.mark.parametrize("kw", [{"epsilon": 0}, {"target_size": 0}, {"seeds_per_lambda": 0}])
    def test_invalid(self, kw):
        with pytest.raises(ValidationError):
            RashomonConfig(**kw)


class TestOptimal:
    def test_reference_loss_definition(self, optimal, arrays):
        assert optimal.provenance.stage == rashomon.STAGE_OPTIMAL
        assert optimal.valid_loss == mlp.loss(optimal.model, arrays[2], arrays[3])

    def test_beats_constant_predictor(self, optimal):
        assert optimal.valid_loss < math.log(2)

    def test_deterministic(self, arrays, arch, fast_cfg, optimal):
        again = rashomon.train_optimal(*arrays, arch, fast_cfg)
        assert again.valid_loss == optimal.valid_loss


class TestStage1:
    def test_lambda_zero_reproduces_optimum(self, seeds, optimal):
        zero = [s for s in seeds if s.provenance.lam == 0 and s.provenance.seed == optimal.provenance.seed]
        assert len(zero) == 1
        assert zero[0].model.same_params(optimal.model)
        assert zero[0].valid_loss == optimal.valid_loss

    def test_huge_lambda_rejected(self, arrays, arch, fast_cfg, optimal):
        rcfg = RashomonConfig(lambda_grid=(0, 1e6))
        got = rashomon.stage1_seeds(*arrays, arch, fast_cfg, rcfg, optimal.valid_loss)
        assert [s.provenance.lam for s in got] == [0.0]

    def test_huge_lambda_rejected_when_training_is_stable(self, arrays, arch, fast_cfg, optimal):
        cfg = replace(fast_cfg, learning_rate=1e-7)
        rcfg = RashomonConfig(lambda_grid=(0, 1e6))
        ref = rashomon.train_optimal(*arrays, arch, cfg).valid_loss
        got = rashomon.stage1_seeds(*arrays, arch, cfg, rcfg, ref)
        assert [s.provenance.lam for s in got] == [0.0]

    def test_grid_acceptance_rechecked(self, seeds, arrays, optimal):
        assert 1 <= len(seeds) <= 12
        limit = 1.05 * optimal.valid_loss
        for s in seeds:
            penalized = mlp.loss(s.model, arrays[2], arrays[3], s.provenance.lam)
            assert penalized <= limit + 1e-15
            assert s.valid_loss == mlp.loss(s.model, arrays[2], arrays[3])

    def test_all_rejected_lists_lambdas(self, arrays, arch, fast_cfg):
        rcfg = RashomonConfig(lambda_grid=(0, 1e-3))
        with pytest.raises(ValidationError, match="rejected lambda"):
            rashomon.stage1_seeds(*arrays, arch, fast_cfg, rcfg, reference_loss=1e-6)


class TestStage2:
    def _expand(self, small_ds, small_split, seeds, arrays, cfg, rcfg, ref):
        subsets = all_subsets(small_ds, small_split, rcfg.n_bins, rcfg.min_subset_size)
        return rashomon.stage2_expand(
            seeds, subsets, small_ds.features, small_ds.outcome, arrays[2], arrays[3], cfg, rcfg, ref
        )

    def test_no_fine_tuning_returns_passing_seeds(self, small_ds, small_split, seeds, arrays, fast_cfg, optimal):
        rcfg = RashomonConfig(finetune_epochs=0)
        ref = optimal.valid_loss
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            got = self._expand(small_ds, small_split, seeds, arrays, fast_cfg, rcfg, ref)
        expected = [s for s in seeds if s.valid_loss <= 1.05 * ref]
        assert got == expected

    def test_members_within_threshold_and_spread(self, small_ds, small_split, seeds, arrays, fast_cfg, optimal):
        rcfg = RashomonConfig(target_size=50, master_seed=4)
        ref = optimal.valid_loss
        got = self._expand(small_ds, small_split, seeds, arrays, fast_cfg, rcfg, ref)
        assert 0 < len(got) <= 50
        for m in got:
            assert mlp.loss(m.model, arrays[2], arrays[3]) <= 1.05 * ref
        tuned = [m for m in got if m.provenance.stage == rashomon.STAGE_FINETUNED]
        assert tuned, "expected some fine-tuned members"
        assert all(m.provenance.subset is not None for m in tuned)
        losses = [m.valid_loss for m in got]
        assert max(losses) - min(losses) > 0

    def test_monotone_in_epsilon(self, small_ds, small_split, seeds, arrays, fast_cfg, optimal):
        ref = optimal.valid_loss
        sets = []
        for eps in (0.05, 0.01, 0.002):
            rcfg = RashomonConfig(epsilon=eps, target_size=10_000, master_seed=2)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                got = self._expand(small_ds, small_split, seeds, arrays, fast_cfg, rcfg, ref)
            sets.append({(m.provenance.candidate, m.provenance.subset, m.provenance.stage) for m in got})
        assert sets[1] <= sets[0]
        assert sets[2] <= sets[1]

    def test_warns_when_few_members(self, small_ds, small_split, seeds, arrays, fast_cfg, optimal):
        rcfg = RashomonConfig(target_size=3)
        with pytest.warns(RuntimeWarning, match="unstable"):
            got = self._expand(small_ds, small_split, seeds, arrays, fast_cfg, rcfg, optimal.valid_loss)
        assert len(got) <= 3

    def test_needs_seeds(self, small_ds, small_split, arrays, fast_cfg):
        with pytest.raises(ValidationError):
            self._expand(small_ds, small_split, [], arrays, fast_cfg, RashomonConfig(), 0.5)


class TestSampleRashomon:
    @pytest.fixture(scope="class")
    @classmethod
    def ens(cls, small_ds, small_split, arch, fast_cfg):
        rcfg = RashomonConfig(lambda_grid=(0, 1e-4, 1e-3), seeds_per_lambda=2, target_size=40, master_seed=9)
        return rashomon.sample_rashomon(small_ds, small_split, arch, fast_cfg, rcfg)

    def test_structure(self, ens):
        assert ens.members[0].provenance.stage == rashomon.STAGE_OPTIMAL
        assert ens.members[0].valid_loss == ens.reference_loss
        assert 2 <= len(ens) <= 41

    def test_epsilon_bound(self, ens):
        assert max(m.valid_loss for m in ens.members) / ens.reference_loss <= 1.05

    def test_optimum_not_duplicated(self, ens):
        best = ens.members[0].model
        assert not any(m.model.same_params(best) for m in ens.members[1:])

    def test_acceptance_soundness(self, ens, small_ds, small_split):
        xv = small_ds.features[small_split.valid_idx]
        yv = small_ds.outcome[small_split.valid_idx]
        for m in ens.members:
            again = mlp.loss(m.model, xv, yv)
            assert abs(again - m.valid_loss) <= 1e-12
            assert again <= ens.threshold

    def test_deterministic(self, ens, small_ds, small_split, arch, fast_cfg):
        rcfg = RashomonConfig(lambda_grid=(0, 1e-4, 1e-3), seeds_per_lambda=2, target_size=40, master_seed=9)
        again = rashomon.sample_rashomon(small_ds, small_split, arch, fast_cfg, rcfg)
        assert [m.valid_loss for m in again.members] == [m.valid_loss for m in ens.members]

    def test_target_size_one(self, small_ds, small_split, arch, fast_cfg):
        rcfg = RashomonConfig(lambda_grid=(0, 1e-4), target_size=1)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ens = rashomon.sample_rashomon(small_ds, small_split, arch, fast_cfg, rcfg)
        assert 1 <= len(ens) <= 2
        assert ens.members[0].provenance.stage == rashomon.STAGE_OPTIMAL

    def test_save_load_round_trip(self, ens, tmp_path):
        rashomon.save_ensemble(ens, tmp_path / "ensemble")
        assert (tmp_path / "ensemble" / "meta.json").exists()
        again = rashomon.load_ensemble(tmp_path / "ensemble")
        assert again.reference_loss == ens.reference_loss
        assert again.epsilon == ens.epsilon
        assert len(again) == len(ens)
        for a, b in zip(again.members, ens.members):
            assert a.model.same_params(b.model)
            assert a.valid_loss == b.valid_loss
            assert a.provenance == b.provenance

    def test_load_missing(self, tmp_path):
        with pytest.raises(ValidationError):
            rashomon.load_ensemble(tmp_path)
