import numpy as np
import pytest
from fractions import Fraction

from depthrank.hourglass import Model, desk_config
from depthrank.sampling import SamplerConfig, read_pairs
from depthrank.synthetic import make_dataset
from depthrank.train import (TrainConfig, TrainSample, depth_map_stats, evaluate,
                             load_dataset, pair_score_diffs, predict_scores, train)


def tiny_model(seed=0):
    return Model(desk_config(n_scales=2, scale_factor=Fraction(1, 16)), seed=seed)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    out = tmp_path_factory.mktemp("trainds")
    cfg = SamplerConfig(width=32, height=32, strategy="distance_constrained",
                        seed=3, ratio_threshold=1.05)
    make_dataset(out, n_images=8, sampler_cfg=cfg, pairs_per_image=20, seed=50)
    return out


def test_ranking_loss_decreases(dataset):
    samples = load_dataset(dataset, dataset / "pairs.csv")
    model = tiny_model()
    history = train(model, samples, TrainConfig(epochs=4, batch_size=4, lr=2e-3, seed=0))
    assert len(history.epoch_losses) == 4
    assert history.epoch_losses[-1] < history.epoch_losses[0]


def test_logmse_loss_decreases(dataset):
    samples = load_dataset(dataset, dataset / "pairs.csv", with_depth=True)
    model = tiny_model()
    history = train(model, samples, TrainConfig(epochs=4, batch_size=4, lr=2e-3,
                                                seed=0, loss="logmse"))
    assert history.epoch_losses[-1] < history.epoch_losses[0]


def test_batch_loss_invariant_to_duplicated_queries(dataset):
    # Doubling every query doubles the sum and the count; the normalized
    # batch loss and its gradients are unchanged, so learning-rate tuning
    # does not depend on the pairs-per-image count.
    from depthrank import tensor as T
    from depthrank.losses import ordinal_loss_op
    from depthrank.tensor import Tensor, backward

    samples = load_dataset(dataset, dataset / "pairs.csv")[:4]
    doubled = [TrainSample(s.image_id, s.image,
                           tuple(np.concatenate([a, a]) for a in s.queries), s.depth)
               for s in samples]

    def batch_loss_and_grad(model, batch):
        x = Tensor(np.stack([s.image for s in batch]).astype(model.dtype))
        out = model(x)
        total = sum(len(s.queries[0]) for s in batch)
        loss = T.mul_scalar(ordinal_loss_op(out, [s.queries for s in batch]),
                            1.0 / total)
        model.zero_grad()
        backward(loss, params=model.parameters())
        return float(loss.data), model.params["stem.w"].grad.copy()

    model = tiny_model(7)
    v1, g1 = batch_loss_and_grad(model, samples)
    v2, g2 = batch_loss_and_grad(model, doubled)
    assert v2 == pytest.approx(v1, rel=1e-6)
    np.testing.assert_allclose(g2, g1, rtol=1e-4, atol=1e-9)


def test_training_is_deterministic(dataset):
    samples = load_dataset(dataset, dataset / "pairs.csv")
    cfg = TrainConfig(epochs=2, batch_size=4, lr=1e-3, seed=9)
    m1, m2 = tiny_model(1), tiny_model(1)
    h1 = train(m1, samples, cfg)
    h2 = train(m2, samples, cfg)
    assert h1.epoch_losses == h2.epoch_losses
    for k in m1.params:
        assert m1.params[k].data.tobytes() == m2.params[k].data.tobytes()


def test_missing_queries_rejected(dataset):
    samples = load_dataset(dataset)  # no pair file: queries None
    with pytest.raises(ValueError, match="queries"):
        train(tiny_model(), samples, TrainConfig(epochs=1))


def test_predict_scores_and_diffs(dataset):
    samples = load_dataset(dataset, dataset / "pairs.csv")
    model = tiny_model()
    scores = predict_scores(model, samples)
    assert set(scores) == {s.image_id for s in samples}
    records = read_pairs(dataset / "pairs.csv")
    gt, dz = pair_score_diffs(scores, records)
    assert len(gt) == len(records)
    image_id, q = records[0]
    z = scores[image_id]
    assert dz[0] == pytest.approx(float(z[q.i] - z[q.j]))


def test_evaluate_without_gt_has_ordinal_only(dataset):
    samples = load_dataset(dataset, dataset / "pairs.csv")
    model = tiny_model()
    scores = predict_scores(model, samples)
    records = read_pairs(dataset / "pairs.csv")
    result = evaluate(scores, records, tau=0.1)
    assert result.report.wkdr is not None
    assert result.report.rmse is None
    assert result.report.tau == 0.1


def test_depth_map_stats_is_mean_map_statistics(rng):
    depths = [rng.uniform(1, 10, size=(6, 6)) for _ in range(5)]
    mean, std = depth_map_stats(depths)
    mean_map = np.stack(depths).mean(axis=0)
    assert mean == pytest.approx(mean_map.mean())
    assert std == pytest.approx(mean_map.std())


def test_history_save_format(tmp_path, dataset):
    samples = load_dataset(dataset, dataset / "pairs.csv")
    history = train(tiny_model(), samples, TrainConfig(epochs=2, batch_size=8))
    path = tmp_path / "curve.csv"
    history.save(path)
    lines = path.read_text().splitlines()
    assert lines[0] == "epoch,mean_loss"
    assert len(lines) == 3
