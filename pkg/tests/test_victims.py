import numpy as np
import pytest

from pcbd.cloud import DEFAULT_FAMILIES, PointCloud, synth_dataset
from pcbd.errors import ConfigMismatch, NothingToPoison, UntrainedModel
from pcbd.rng import SeededRng
from pcbd.triggers import TriggerSpec
from pcbd.victims import (
    PoisonPlan,
    VictimSpec,
    eval_acc,
    eval_asr,
    eval_imperceptibility,
    init_victim,
    load_victim,
    poison_dataset,
    save_victim,
    train_victim,
)

SMALL_PNL = VictimSpec(epochs=30, trunk_widths=(16, 24, 32), head_hidden=16)
SMALL_ECL = VictimSpec(
    architecture="edgeconv_lite", epochs=20, trunk_widths=(16, 24, 32),
    edge_widths=(16, 16), head_hidden=16, knn_k=4,
)


@pytest.fixture(scope="module")
def dataset():
    return synth_dataset(DEFAULT_FAMILIES[:4], 6, 64, SeededRng(31), split="train")


@pytest.fixture(scope="module")
def test_set():
    return synth_dataset(DEFAULT_FAMILIES[:4], 3, 64, SeededRng(32), split="test")


@pytest.fixture(scope="module")
def trained_pnl(dataset):
    spec = VictimSpec(epochs=60, trunk_widths=(16, 24, 32), head_hidden=16,
                      k_classes=4)
    return train_victim(dataset, spec, SeededRng(33))


class TestPoisonDataset:
    def test_count_and_relabeling(self, dataset):
        plan = PoisonPlan(rate=0.25, target_label=0,
                          trigger=TriggerSpec("ball"), seed=1)
        poisoned, idx = poison_dataset(dataset, plan)
        assert len(idx) == round(0.25 * len(dataset))
        assert (poisoned.labels[idx] == 0).all()
        assert (dataset.labels[idx] != 0).all()  # drawn from other classes

    def test_unpoisoned_entries_bit_identical(self, dataset):
        plan = PoisonPlan(rate=0.2, target_label=1,
                          trigger=TriggerSpec("jitter"), seed=2)
        poisoned, idx = poison_dataset(dataset, plan)
        untouched = np.setdiff1d(np.arange(len(dataset)), idx)
        for i in untouched:
            assert poisoned.clouds[i] is dataset.clouds[i]
            assert poisoned.labels[i] == dataset.labels[i]

    def test_poisoned_entries_differ(self, dataset):
        plan = PoisonPlan(rate=0.2, target_label=1,
                          trigger=TriggerSpec("ball"), seed=3)
        poisoned, idx = poison_dataset(dataset, plan)
        from pcbd.metrics import chamfer

        for i in idx:
            assert chamfer(dataset.clouds[i], poisoned.clouds[i]) > 0

    def test_nothing_to_poison(self, dataset):
        plan = PoisonPlan(rate=0.001, target_label=0,
                          trigger=TriggerSpec("ball"), seed=4)
        with pytest.raises(NothingToPoison):
            poison_dataset(dataset, plan)

    def test_target_label_out_of_range(self, dataset):
        plan = PoisonPlan(rate=0.2, target_label=9,
                          trigger=TriggerSpec("ball"), seed=5)
        with pytest.raises(ConfigMismatch):
            poison_dataset(dataset, plan)


class TestTraining:
    def test_learns_the_toy_task(self, dataset, test_set, trained_pnl):
        assert trained_pnl.train_log[-1]["acc"] >= 0.9
        assert eval_acc(trained_pnl, test_set) >= 0.75

    def test_edgeconv_trains(self, dataset):
        spec = VictimSpec(
            architecture="edgeconv_lite", epochs=10,
            trunk_widths=(16, 24, 32), edge_widths=(16, 16),
            head_hidden=16, knn_k=4, k_classes=4,
        )
        model = train_victim(dataset, spec, SeededRng(34))
        assert model.trained
        assert model.train_log[-1]["loss"] < model.train_log[0]["loss"]

    def test_same_seed_byte_identical(self, dataset, tmp_path):
        spec = VictimSpec(epochs=2, trunk_widths=(8, 12, 16), head_hidden=8,
                          k_classes=4)
        p1, p2 = tmp_path / "a.pcbd", tmp_path / "b.pcbd"
        save_victim(train_victim(dataset, spec, SeededRng(35)), p1)
        save_victim(train_victim(dataset, spec, SeededRng(35)), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_class_count_mismatch(self, dataset):
        spec = VictimSpec(epochs=1, k_classes=2)
        with pytest.raises(ConfigMismatch):
            train_victim(dataset, spec, SeededRng(36))

    def test_augmented_training_deterministic(self, dataset):
        from pcbd.defenses import AugmentationSpec

        spec = VictimSpec(epochs=2, trunk_widths=(8, 12, 16), head_hidden=8,
                          k_classes=4)
        augs = (AugmentationSpec("R"), AugmentationSpec("Jitter"))
        a = train_victim(dataset, spec, SeededRng(37), augmentations=augs)
        b = train_victim(dataset, spec, SeededRng(37), augmentations=augs)
        np.testing.assert_array_equal(
            a.layers_map["head2"].w.value, b.layers_map["head2"].w.value
        )


class TestModelProperties:
    def test_logit_permutation_invariance(self, trained_pnl, test_set):
        gen = np.random.default_rng(38)
        pts = test_set.clouds[0].points
        a = trained_pnl.logits(pts).value
        b = trained_pnl.logits(pts[gen.permutation(len(pts))]).value
        assert np.abs(a - b).max() < 1e-9

    def test_pointwise_features_row_count(self, trained_pnl, test_set):
        feats = trained_pnl.pointwise_features(test_set.clouds[0].points)
        assert feats.value.shape[0] == test_set.clouds[0].n

    def test_untrained_predict_rejected(self):
        model = init_victim(VictimSpec(epochs=1, k_classes=4), SeededRng(39))
        with pytest.raises(UntrainedModel):
            model.predict(PointCloud(np.zeros((4, 3)) + 0.1))


class TestEvaluation:
    def test_constant_dataset_perfect_model(self, dataset, trained_pnl):
        # evaluating on the training set of a converged model: ACC == 1
        preds = trained_pnl.predict_batch(dataset.clouds)
        if (preds == dataset.labels).all():
            assert eval_acc(trained_pnl, dataset) == 1.0

    def test_acc_bounds(self, trained_pnl, test_set):
        assert 0.0 <= eval_acc(trained_pnl, test_set) <= 1.0

    def test_untrained_model_near_chance(self):
        # a 2-class problem scored with an untrained head stays near 0.5
        ds = synth_dataset(DEFAULT_FAMILIES[:2], 20, 32, SeededRng(40))
        spec = VictimSpec(epochs=1, trunk_widths=(8, 12, 16), head_hidden=8,
                          k_classes=2)
        model = train_victim(ds, spec, SeededRng(41))
        gen = np.random.default_rng(42)
        shuffled = ds.labels.copy()
        gen.shuffle(shuffled)
        acc = float((model.predict_batch(ds.clouds) == shuffled).mean())
        assert abs(acc - 0.5) <= 0.25

    def test_identity_trigger_asr_is_misclassification_rate(
        self, trained_pnl, test_set
    ):
        res = eval_asr(trained_pnl, test_set, TriggerSpec("jitter", sigma=0.0), 0)
        preds = trained_pnl.predict_batch(test_set.clouds)
        non_target = test_set.labels != 0
        expect = float((preds[non_target] == 0).mean())
        assert res.asr == expect
        assert 0.0 <= res.asr <= 1.0 and 0.0 <= res.asr_all <= 1.0

    def test_asr_conventions_differ_by_target_entries(self, trained_pnl, test_set):
        res = eval_asr(trained_pnl, test_set, TriggerSpec("jitter", sigma=0.0), 0)
        assert res.n_eval == int((test_set.labels != 0).sum())
        assert res.n_total == len(test_set)

    def test_imperceptibility_identity_trigger_zero(self, test_set):
        rep = eval_imperceptibility(test_set, TriggerSpec("jitter", sigma=0.0))
        assert rep["cd"] == 0.0 and rep["hd"] == 0.0
        assert rep["swd"] == 0.0 and rep["wd_exact"] == 0.0

    def test_rotation_hd_matches_closed_form(self):
        # on clouds whose spacing exceeds the displacement, every rotated
        # point's nearest neighbor is its own preimage, so HD equals the
        # largest point displacement exactly; dense clouds may pair up
        # differently, which only lowers HD
        from pcbd.cloud import euler_matrix, LabeledDataset
        from pcbd.cloud import PointCloud as PC

        gen = np.random.default_rng(44)
        lattice = np.array(
            [[x, y, z] for x in (-1.0, 0.0, 1.0) for y in (-1.0, 0.0, 1.0)
             for z in (-1.0, 1.0)]
        )
        # spacing 1.0 versus max displacement ~0.25 at 10 degrees
        sparse = [PC(lattice + gen.normal(0, 0.02, lattice.shape))
                  for _ in range(3)]
        ds = LabeledDataset(sparse, np.zeros(3, dtype=int), k=1, split="test")
        spec = TriggerSpec("rotation", angles=(0.0, 0.0, 10.0))
        rep = eval_imperceptibility(ds, spec, exact_wd=False, swd_projections=8)
        rot = euler_matrix((0.0, 0.0, 10.0))
        hds = [
            np.linalg.norm(c.points @ rot.T - c.points, axis=1).max()
            for c in sparse
        ]
        assert rep["hd"] == pytest.approx(np.mean(hds), rel=1e-9)

    def test_rotation_hd_bounded_by_displacement(self, test_set):
        spec = TriggerSpec("rotation", angles=(0.0, 0.0, 10.0))
        rep = eval_imperceptibility(test_set, spec, exact_wd=False,
                                    swd_projections=8)
        from pcbd.cloud import euler_matrix

        rot = euler_matrix((0.0, 0.0, 10.0))
        bound = np.mean([
            np.linalg.norm(c.points @ rot.T - c.points, axis=1).max()
            for c in test_set.clouds
        ])
        assert rep["hd"] <= bound + 1e-12

    def test_ball_hd_geometric_bound(self, test_set):
        spec = TriggerSpec("ball", seed=6)
        rep = eval_imperceptibility(test_set, spec, exact_wd=False,
                                    swd_projections=8)
        center = np.array([-0.9, -0.9, -0.9])
        bounds = [
            np.linalg.norm(c.points - center, axis=1).min() - 0.1
            for c in test_set.clouds
        ]
        assert rep["hd"] >= np.mean(bounds)

    def test_evaluation_pure(self, trained_pnl, test_set):
        spec = TriggerSpec("jitter", seed=7)
        a = eval_asr(trained_pnl, test_set, spec, 1)
        b = eval_asr(trained_pnl, test_set, spec, 1)
        assert a == b


class TestPersistence:
    def test_round_trip(self, dataset, tmp_path):
        spec = VictimSpec(epochs=2, trunk_widths=(8, 12, 16), head_hidden=8,
                          k_classes=4)
        model = train_victim(dataset, spec, SeededRng(43))
        path = tmp_path / "v.pcbd"
        save_victim(model, path)
        back = load_victim(path)
        assert back.spec == model.spec
        cloud = dataset.clouds[0]
        assert back.predict(cloud) == model.predict(cloud)
        np.testing.assert_array_equal(
            back.logits(cloud.points).value, model.logits(cloud.points).value
        )


class TestAttackReport:
    def test_aggregate_report(self, trained_pnl, test_set):
        from pcbd.victims import evaluate_attack

        rep = evaluate_attack(
            trained_pnl, test_set, TriggerSpec("jitter", seed=1), 0,
            poison={"rate": 0.05, "target_label": 0}, seed=9,
        )
        d = rep.to_dict()
        assert 0.0 <= d["acc"] <= 1.0 and 0.0 <= d["asr"] <= 1.0
        assert d["imperceptibility"]["cd"] >= 0.0
        assert d["poison"]["rate"] == 0.05

    def test_out_of_range_rejected(self):
        from pcbd.victims import AttackReport

        with pytest.raises(ValueError):
            AttackReport(acc=1.2, asr=0.0, asr_all=0.0, imperceptibility={},
                         trigger={}, poison={})
