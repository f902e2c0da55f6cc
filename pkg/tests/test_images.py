import numpy as np
import pytest

from vineyield.errors import ParseError, ValidationError
from vineyield.geo import GeoFix, LocalPoint
from vineyield.images import (
    ImageRecord,
    blur_scores,
    filter_quality,
    georeference_images,
    parse_image_index_csv,
    parse_track_csv,
)

ORIGIN = GeoFix(38.0, -121.0, 0.0)


def frame(i, t, side="North", quality=1.0):
    return ImageRecord(id=i, path=f"frame_{i}.npy", t=t, side=side, quality=quality)


def track_from_local(points_and_times):
    """Build GeoFixes whose local projection is the given (t, x, y) list."""
    import math

    R = 6_371_000.0
    fixes = []
    for t, x, y in points_and_times:
        lat = ORIGIN.lat + math.degrees(y / R)
        lon = ORIGIN.lon + math.degrees(x / (R * math.cos(math.radians(ORIGIN.lat))))
        fixes.append(GeoFix(lat, lon, t))
    return fixes


def test_frame_at_fix_gets_fix_position():
    track = track_from_local([(0.0, 0.0, 0.0), (1.0, 2.0, 0.0)])
    placed, dropped = georeference_images([frame(0, 1.0)], track, ORIGIN)
    assert dropped == 0
    assert placed[0].pos.x == pytest.approx(2.0, abs=1e-9)
    assert placed[0].pos.y == pytest.approx(0.0, abs=1e-9)


def test_frame_midway_interpolates():
    track = track_from_local([(0.0, 0.0, 0.0), (1.0, 2.0, 0.0)])
    placed, _ = georeference_images([frame(0, 0.5)], track, ORIGIN)
    assert placed[0].pos.x == pytest.approx(1.0, abs=1e-9)


def test_frame_outside_span_dropped():
    track = track_from_local([(0.0, 0.0, 0.0), (1.0, 2.0, 0.0)])
    placed, dropped = georeference_images([frame(0, 11.0)], track, ORIGIN, slack_s=0.5)
    assert placed == [] and dropped == 1
    # inside the slack margin survives (clamped to the end of the track)
    placed, dropped = georeference_images([frame(0, 1.3)], track, ORIGIN, slack_s=0.5)
    assert dropped == 0 and placed[0].pos.x == pytest.approx(2.0)


def test_interpolation_stays_on_segment():
    rng = np.random.default_rng(5)
    pts = [(float(t), float(rng.uniform(0, 50)), float(rng.uniform(0, 50))) for t in range(6)]
    track = track_from_local(pts)
    frames = [frame(i, float(rng.uniform(0, 5))) for i in range(40)]
    placed, _ = georeference_images(frames, track, ORIGIN)
    for f in placed:
        i = min(int(f.t), 4)
        (t0, x0, y0), (t1, x1, y1) = pts[i], pts[i + 1]
        lam = (f.t - t0) / (t1 - t0)
        assert f.pos.x == pytest.approx(x0 + lam * (x1 - x0), abs=1e-6)
        assert f.pos.y == pytest.approx(y0 + lam * (y1 - y0), abs=1e-6)


def test_track_errors():
    with pytest.raises(ValidationError, match="empty"):
        georeference_images([frame(0, 0.0)], [], ORIGIN)
    bad = track_from_local([(0.0, 0.0, 0.0), (0.0, 1.0, 0.0)])
    with pytest.raises(ValidationError, match="strictly increasing"):
        georeference_images([frame(0, 0.0)], bad, ORIGIN)


def test_filter_quality_partition_and_examples():
    frames = [frame(0, 0, quality=0.2), frame(1, 0, quality=0.9)]
    kept, tossed = filter_quality(frames, 0.5)
    assert [f.id for f in kept] == [1] and [f.id for f in tossed] == [0]
    kept, tossed = filter_quality(frames, 0.0)
    assert len(kept) == 2 and tossed == []
    kept, tossed = filter_quality(frames, 1.0)
    assert kept == [] and len(tossed) == 2


def test_filter_quality_monotone_in_threshold():
    rng = np.random.default_rng(2)
    frames = [frame(i, 0, quality=float(q)) for i, q in enumerate(rng.random(30))]
    prev = None
    for thr in np.linspace(0, 1, 11):
        kept, _ = filter_quality(frames, float(thr))
        ids = {f.id for f in kept}
        if prev is not None:
            assert ids <= prev
        prev = ids


def test_image_record_validation():
    with pytest.raises(ValidationError):
        ImageRecord(id=0, path="x", t=0.0, side="Up")
    with pytest.raises(ValidationError):
        ImageRecord(id=0, path="x", t=0.0, side="North", quality=1.5)


def test_blur_scores_orders_sharpness():
    rng = np.random.default_rng(3)
    sharp = rng.random((16, 16, 3))
    blurred = np.full((16, 16, 3), 0.5)
    scores = blur_scores([sharp, blurred])
    assert scores[0] > scores[1]
    assert scores.min() >= 0.0 and scores.max() <= 1.0


def test_index_and_track_parsing(tmp_path):
    idx = tmp_path / "images.csv"
    idx.write_text(
        "image_id,path,timestamp,side,quality\n"
        "0,a.npy,1.5,North,0.8\n"
        "1,b.npy,1.6,South,\n"
    )
    frames = parse_image_index_csv(idx)
    assert frames[0].quality == 0.8
    assert frames[1].quality == 1.0  # missing quality defaults to 1

    trk = tmp_path / "track.csv"
    trk.write_text("timestamp,lat,lon\n0.0,38.0,-121.0\n0.1,38.00001,-121.0\n")
    track = parse_track_csv(trk)
    assert len(track) == 2 and track[1].t == 0.1

    bad = tmp_path / "bad.csv"
    bad.write_text("image_id,path\n0,a.npy\n")
    with pytest.raises(ParseError):
        parse_image_index_csv(bad)
