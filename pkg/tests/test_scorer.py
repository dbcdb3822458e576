import threading

import numpy as np
import pytest
import requests

from cystseg import scorer as scorer_mod
from cystseg import utils
from cystseg.errors import RemoteScoringError, ScoringError, ValidationError
from cystseg.formats import write_label_png, write_pfm, write_rgb
from cystseg.manifest import ImageEntry
from cystseg.morphology import boundary_map
from cystseg.scorer import (
    FileScorer,
    MockScorer,
    RemoteScorer,
    ScorePair,
    encode_tile_request,
    inject_debris,
    mock_from_ground_truth,
    pack_score_pair,
    unpack_score_pair,
)
from cystseg.tiler import plan_tiling


def test_file_scorer_image_level_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    cyst = rng.random((20, 30)).astype(np.float32)
    boundary = rng.random((20, 30)).astype(np.float32)
    write_pfm(tmp_path / "img.cyst.pfm", cyst)
    write_pfm(tmp_path / "img.boundary.pfm", boundary)
    pair = FileScorer(tmp_path).score_image(ImageEntry("img", height=20, width=30), 16, 4)
    np.testing.assert_array_equal(pair.cyst, cyst)
    np.testing.assert_array_equal(pair.boundary, boundary)


def test_file_scorer_stitches_tiles(tmp_path):
    rng = np.random.default_rng(1)
    full = rng.random((20, 30)).astype(np.float32)
    plan = plan_tiling(20, 30, 16, 16, 4)
    for origin in plan.origins:
        window = full[origin.row : origin.row + 16, origin.col : origin.col + 16]
        name = f"img_r{origin.row}_c{origin.col}"
        write_pfm(tmp_path / f"{name}.cyst.pfm", window)
        write_pfm(tmp_path / f"{name}.boundary.pfm", window)
    pair = FileScorer(tmp_path).score_image(ImageEntry("img", height=20, width=30), 16, 4, workers=3)
    np.testing.assert_allclose(pair.cyst, full, atol=1e-7)
    np.testing.assert_allclose(pair.boundary, full)


def test_file_scorer_missing_file_names_stem(tmp_path):
    with pytest.raises(ScoringError, match="img_r0_c0"):
        FileScorer(tmp_path).score_image(ImageEntry("img", height=8, width=8), 8, 0)


def test_file_scorer_rejects_out_of_range(tmp_path):
    write_pfm(tmp_path / "img.cyst.pfm", np.full((4, 4), 1.5, dtype=np.float32))
    write_pfm(tmp_path / "img.boundary.pfm", np.zeros((4, 4), dtype=np.float32))
    with pytest.raises(ValidationError):
        FileScorer(tmp_path).score_image(ImageEntry("img"), 4, 0)


def test_mock_noise_free_maps_are_indicators(discs):
    gt = discs((64, 64), [(20, 20), (40, 44)], 9)
    pair = mock_from_ground_truth(gt, 0.0, 0, seed=123)
    np.testing.assert_array_equal(pair.cyst, (gt > 0).astype(float))
    np.testing.assert_array_equal(pair.boundary, boundary_map(gt, 2).astype(float))


def test_mock_blur_on_step_edge():
    gt = np.zeros((10, 10), dtype=np.int32)
    gt[:, 5:] = 1
    pair = mock_from_ground_truth(gt, 0.0, 1, seed=0)
    assert pair.cyst[5, 4] == pytest.approx(1 / 3)
    assert pair.cyst[5, 5] == pytest.approx(2 / 3)
    assert pair.cyst[5, 0] == 0.0 and pair.cyst[5, 9] == 1.0


def test_mock_is_seeded_and_clamped(discs):
    gt = discs((48, 48), [(24, 24)], 12)
    a = mock_from_ground_truth(gt, 0.1, 1, seed=7)
    b = mock_from_ground_truth(gt, 0.1, 1, seed=7)
    assert np.array_equal(a.cyst, b.cyst) and np.array_equal(a.boundary, b.boundary)
    loud = mock_from_ground_truth(gt, 5.0, 0, seed=1)
    for plane in loud:
        assert plane.min() >= 0.0 and plane.max() <= 1.0


def test_mock_scorer_tiled_equals_image_level(tmp_path, discs):
    gt = discs((100, 140), [(30, 30), (60, 100)], 15)
    write_label_png(tmp_path / "g.png", gt)
    image = ImageEntry("g", ground_truth=tmp_path / "g.png")
    pair = MockScorer().score_image(image, 48, 8)
    np.testing.assert_array_equal(pair.cyst, (gt > 0).astype(float))
    np.testing.assert_array_equal(pair.boundary, boundary_map(gt, 2).astype(float))


def test_mock_scorer_needs_ground_truth(tmp_path):
    with pytest.raises(ScoringError, match="nope"):
        MockScorer().score_image(ImageEntry("nope", ground_truth=tmp_path / "missing.png"), 8, 0)


def test_inject_debris_adds_blobs_away_from_instances(discs):
    gt = discs((256, 256), [(60, 60)], 20)
    out, added = inject_debris(gt, 3.0, np.random.default_rng(5))
    assert out.max() == 1 + added
    np.testing.assert_array_equal(out[gt > 0], gt[gt > 0])
    for label in range(2, out.max() + 1):
        assert (out == label).sum() >= 500


def test_frame_round_trip_and_truncation():
    pair = ScorePair(np.full((3, 2), 0.25, dtype=np.float32), np.full((3, 2), 0.75, dtype=np.float32))
    payload = pack_score_pair(pair)
    back = unpack_score_pair(payload)
    np.testing.assert_array_equal(back.cyst, pair.cyst)
    np.testing.assert_array_equal(back.boundary, pair.boundary)
    with pytest.raises(ValidationError):
        unpack_score_pair(payload[:-1])
    with pytest.raises(ValidationError):
        unpack_score_pair(payload + b"x")


def test_tile_request_body():
    tile = np.zeros((2, 3, 3), dtype=np.uint8)
    body = encode_tile_request(tile)
    assert body.startswith(b"2 3\n") and len(body) == 4 + 18
    with pytest.raises(ValidationError):
        encode_tile_request(np.zeros((2, 3)))


class FakeResponse:
    def __init__(self, status_code, content=b""):
        self.status_code = status_code
        self.content = content

    def raise_for_status(self):
        if self.status_code >= 400:
            raise requests.HTTPError(f"{self.status_code} error", response=self)


class FakeSession:
    """Scores each pixel as red / 255 for the cyst head and blue / 255 for the boundary head."""

    failures_left = 0
    status = 200
    calls = 0
    lock = threading.Lock()

    def __init__(self):
        self.headers = {}
        self.closed = False

    def request(self, method, url, timeout=None, data=None):
        assert method == "POST" and url.endswith("/score")
        with FakeSession.lock:
            FakeSession.calls += 1
            if FakeSession.failures_left:
                FakeSession.failures_left -= 1
                raise requests.ConnectionError("connection reset")
        if FakeSession.status != 200:
            return FakeResponse(FakeSession.status)
        header, raw = data.split(b"\n", 1)
        h, w = (int(v) for v in header.split())
        tile = np.frombuffer(raw, dtype=np.uint8).reshape(h, w, 3)
        pair = ScorePair(tile[..., 0] / 255.0, tile[..., 2] / 255.0)
        return FakeResponse(200, pack_score_pair(pair))

    def close(self):
        self.closed = True


@pytest.fixture
def fake_remote(monkeypatch):
    FakeSession.failures_left = 0
    FakeSession.status = 200
    FakeSession.calls = 0
    monkeypatch.setattr(scorer_mod.requests, "Session", FakeSession)
    monkeypatch.setattr(utils.time, "sleep", lambda _: None)
    return FakeSession


def test_remote_scorer_stitches_service_output(tmp_path, fake_remote):
    rng = np.random.default_rng(3)
    rgb = rng.integers(0, 256, size=(40, 52, 3), dtype=np.uint8)
    write_rgb(tmp_path / "im.png", rgb)
    remote = RemoteScorer("http://model.local/", retries=1, max_in_flight=2, token="secret")
    pair = remote.score_image(ImageEntry("im", image=tmp_path / "im.png"), 16, 4, workers=4)
    np.testing.assert_allclose(pair.cyst, rgb[..., 0] / 255.0, atol=1e-6)
    np.testing.assert_allclose(pair.boundary, rgb[..., 2] / 255.0, atol=1e-6)
    assert fake_remote.calls == len(plan_tiling(40, 52, 16, 16, 4))


def test_remote_retries_connection_errors(tmp_path, fake_remote):
    fake_remote.failures_left = 2
    tile = np.zeros((4, 4, 3), dtype=np.uint8)
    pair = RemoteScorer("http://model.local", retries=2).score_tile("t", tile)
    assert pair.cyst.shape == (4, 4)
    assert fake_remote.calls == 3


def test_remote_gives_up_with_cause(fake_remote):
    fake_remote.status = 503
    with pytest.raises(RemoteScoringError) as info:
        RemoteScorer("http://model.local", retries=2).score_tile("t", np.zeros((4, 4, 3), dtype=np.uint8))
    assert info.value.attempts == 3
    assert isinstance(info.value.__cause__, requests.HTTPError)
    assert fake_remote.calls == 3


def test_remote_does_not_retry_client_errors(fake_remote):
    fake_remote.status = 404
    with pytest.raises(RemoteScoringError):
        RemoteScorer("http://model.local", retries=2).score_tile("t", np.zeros((4, 4, 3), dtype=np.uint8))
    assert fake_remote.calls == 1


def test_remote_close_reaches_every_thread_session(fake_remote):
    remote = RemoteScorer("http://model.local", retries=0)
    tile = np.zeros((4, 4, 3), dtype=np.uint8)
    barrier = threading.Barrier(3)

    def score(name):
        barrier.wait()
        remote.score_tile(name, tile)

    threads = [threading.Thread(target=score, args=(f"t{i}",)) for i in range(3)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    sessions = list(remote._sessions)
    assert len(sessions) == 3
    remote.close()
    assert all(s.closed for s in sessions)
    assert remote._sessions == []


def framed(payload):
    return len(payload).to_bytes(8, "little") + payload


def test_remote_rejects_corrupt_payload(monkeypatch, fake_remote):
    monkeypatch.setattr(FakeSession, "request", lambda self, *a, **kw: FakeResponse(200, framed(b"Pf\nab cd\n-1.0\n")))
    with pytest.raises(ValidationError, match="cyst payload"):
        RemoteScorer("http://model.local", retries=0).score_tile("t", np.zeros((4, 4, 3), dtype=np.uint8))
