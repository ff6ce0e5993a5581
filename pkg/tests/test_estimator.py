import numpy as np
import pytest
from sklearn.base import clone

from deepoint.estimator import DeePointEstimator, TrackWindower, check_directions, check_packed
from deepoint.windows import PACKED_DIM, build_windows


@pytest.fixture(scope="module")
def arrays(tiny_dataset):
    tr = build_windows(tiny_dataset, "train", 3)
    te = build_windows(tiny_dataset, "val", 3)
    return (tr.packed(), tr.pointing, tr.directions), (te.packed(), te.pointing, te.directions)


def small(**kw):
    base = dict(embed_dim=16, joint_layers=1, temporal_layers=1, window=3, max_epochs=2, steps_per_epoch=10,
                batch_size=8)
    base.update(kw)
    return DeePointEstimator(**base)


def test_params_round_trip_and_clone():
    est = small(threshold=0.3)
    p = est.get_params()
    assert p["threshold"] == 0.3 and p["window"] == 3
    c = clone(est)
    assert c.get_params() == p
    est.set_params(embed_dim=8, heads=2)
    assert est.get_params()["embed_dim"] == 8


def test_validation_helpers():
    with pytest.raises(ValueError):
        check_packed(np.zeros((2, 3, 5)))
    with pytest.raises(ValueError):
        check_packed(np.zeros((2, 4, PACKED_DIM)), window=3)
    X = np.zeros((2, 3, PACKED_DIM))
    X[0, 0, 0] = np.inf
    with pytest.raises(ValueError):
        check_packed(X)
    with pytest.raises(ValueError):
        check_directions([[1.0, 1.0, 0.0]], 1)
    d = check_directions([[np.nan] * 3, [0.0, 0.0, 1.0]], 2)
    assert np.isnan(d[0]).all()


def test_fit_predict_contract(arrays):
    (X, y, d), (Xv, yv, dv) = arrays
    est = small().fit(X, y, d, Xv, yv, dv)
    proba = est.predict_proba(Xv)
    assert proba.shape == (len(Xv), 2)
    np.testing.assert_allclose(proba.sum(1), 1.0, atol=1e-6)
    np.testing.assert_array_equal(est.predict(Xv), proba[:, 1] >= 0.5)
    nu = est.predict_direction(Xv)
    np.testing.assert_allclose(np.linalg.norm(nu, axis=1), 1.0, atol=1e-5)
    assert 0.0 <= est.score(Xv, yv) <= 1.0
    assert 0.0 <= est.direction_error(Xv, np.where(yv[:, None], dv, np.nan)) <= 180.0
    again = DeePointEstimator.from_checkpoint(est.checkpoint_)
    np.testing.assert_allclose(again.predict_proba(Xv), proba, atol=1e-6)


def test_fit_without_explicit_validation(arrays):
    (X, y, d), _ = arrays
    est = small(max_epochs=1, steps_per_epoch=3).fit(X, y, d)
    assert est.checkpoint_.epoch == 1


def test_unfitted_predict_raises(arrays):
    from sklearn.exceptions import NotFittedError

    with pytest.raises(NotFittedError):
        small().predict(arrays[1][0])


def test_track_windower_shapes(tiny_dataset):
    sess = next(iter(tiny_dataset.sessions.values()))
    tracks = list(sess.tracks.values())[:2]
    X = TrackWindower(window=4).fit().transform(tracks)
    assert X.shape[1:] == (4, PACKED_DIM)
    assert len(X) <= sum(t.n_frames for t in tracks)
