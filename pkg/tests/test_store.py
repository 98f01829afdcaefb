import hashlib
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from treecat.errors import DuplicateView, EmptyIndex, InvalidCoordinate, ParseError, UnknownView
from treecat.geo import CameraPose, GeoPoint, PixelBox, enu_arrays
from treecat.store import (
    AerialFrame,
    DetectionRecord,
    GroundTruthTree,
    Proposal,
    ViewIndex,
    check_proposals,
    exact_degrees,
    load_inventory,
    load_panorama_index,
    load_proposals,
    nearest_panorama,
    read_detections,
    write_detections,
    write_inventory,
    write_panorama_index,
    write_proposals,
)

ANCHOR = GeoPoint.from_degrees(34.1478, -118.1445)


def random_trees(rng, n):
    # coordinates originate in degrees, as they do in inventory files
    lat = 34.1478 + rng.uniform(-0.01, 0.01, n)
    lng = -118.1445 + rng.uniform(-0.01, 0.01, n)
    sp = ["london plane", "jacaranda", None]
    return [
        GroundTruthTree(f"t{i}", GeoPoint.from_degrees(float(a), float(b)), sp[i % 3])
        for i, (a, b) in enumerate(zip(lat, lng))
    ]


class TestInventory:
    def test_empty_file(self, tmp_path):
        p = tmp_path / "inv.csv"
        p.write_text("")
        assert load_inventory(p) == []

    def test_round_trip_bit_exact(self, tmp_path):
        trees = random_trees(np.random.default_rng(0), 100)
        p = tmp_path / "inv.csv"
        write_inventory(trees, p)
        back = load_inventory(p)
        assert back == trees
        q = tmp_path / "again.csv"
        write_inventory(back, q)
        assert q.read_bytes() == p.read_bytes()

    def test_filters_non_trees_and_normalizes(self, tmp_path):
        p = tmp_path / "inv.csv"
        p.write_text(
            "id,lat_deg,lng_deg,species,epoch,type\n"
            "a,34.1,-118.1,  London   PLANE ,2011,tree\n"
            "b,34.1,-118.1,,,planting site\n"
            "c,34.1,-118.1,,,shrub\n"
        )
        trees = load_inventory(p)
        assert [t.id for t in trees] == ["a"]
        assert trees[0].species == "london plane"
        assert trees[0].epoch == "2011"

    def test_out_of_band_latitude(self, tmp_path):
        p = tmp_path / "inv.csv"
        p.write_text("id,lat_deg,lng_deg\nx,95.0,10.0\n")
        with pytest.raises(InvalidCoordinate) as exc:
            load_inventory(p)
        assert exc.value.line == 2

    def test_malformed_rows(self, tmp_path):
        p = tmp_path / "inv.csv"
        p.write_text("id,lat_deg,lng_deg\nx,abc,10.0\n")
        with pytest.raises(ParseError):
            load_inventory(p)
        p.write_text("id,lat_deg\nx,1.0\n")
        with pytest.raises(ParseError):
            load_inventory(p)
        p.write_text("id,lat_deg,lng_deg\nx,1,1\nx,2,2\n")
        with pytest.raises(ParseError, match="duplicate"):
            load_inventory(p)


class TestPanoramasAndProposals:
    def cams(self):
        return [CameraPose(f"p{i}", GeoPoint(ANCHOR.lat, ANCHOR.lng + i * 1e-6), 0.1 * i, 2.5, 1664, 832) for i in range(5)]

    def test_round_trip(self, tmp_path):
        p = tmp_path / "pano.jsonl"
        write_panorama_index(self.cams(), p)
        back = load_panorama_index(p)
        assert [c.id for c in back] == [c.id for c in self.cams()]
        for a, b in zip(back, self.cams()):
            assert a.geo == b.geo
            assert a.yaw == pytest.approx(b.yaw, abs=1e-15)

    def test_empty_and_duplicate(self, tmp_path):
        p = tmp_path / "pano.jsonl"
        p.write_text("")
        assert load_panorama_index(p) == []
        row = json.dumps({"id": "a", "lat_deg": 34, "lng_deg": -118, "yaw_deg": 0, "h": 2.5, "width": 8, "height": 4})
        p.write_text(row + "\n" + row + "\n")
        with pytest.raises(DuplicateView):
            load_panorama_index(p)

    def test_proposals_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        props = [Proposal("aerial", PixelBox(*rng.uniform(1, 100, 2), 100.0, 100.0), float(rng.normal())) for _ in range(50)]
        p = tmp_path / "props.jsonl"
        write_proposals(props, p)
        assert load_proposals(p) == props

    def test_bad_proposal_line(self, tmp_path):
        p = tmp_path / "props.jsonl"
        p.write_text('{"view_id": "aerial", "x": 1, "y": 2, "w": 3, "h": 4, "score": 1}\n{"view_id": "aerial"\n')
        with pytest.raises(ParseError) as exc:
            load_proposals(p)
        assert exc.value.line == 2

    def test_unknown_view(self):
        index = ViewIndex(AerialFrame(20, 0.0, 0.0, 1000.0, 1000.0), tuple(self.cams()))
        with pytest.raises(UnknownView):
            check_proposals([Proposal("nope", PixelBox(1, 1, 1, 1), 0.0)], index)
        check_proposals([Proposal("p1", PixelBox(10, 500, 5, 5), 0.0)], index)


class TestNearestPanorama:
    def test_single_and_closer(self):
        a = CameraPose("a", GeoPoint(ANCHOR.lat, ANCHOR.lng), 0.0)
        assert nearest_panorama(ANCHOR, [a]).id == "a"
        five = CameraPose("z", GeoPoint(ANCHOR.lat + 5 / 6378137.0, ANCHOR.lng), 0.0)
        fifteen = CameraPose("b", GeoPoint(ANCHOR.lat + 15 / 6378137.0, ANCHOR.lng), 0.0)
        assert nearest_panorama(ANCHOR, [fifteen, five]).id == "z"

    def test_tie_goes_to_smallest_id(self):
        d = 5 / 6378137.0
        a = CameraPose("b", GeoPoint(ANCHOR.lat + d, ANCHOR.lng), 0.0)
        b = CameraPose("a", GeoPoint(ANCHOR.lat - d, ANCHOR.lng), 0.0)
        # symmetric north/south offsets give exactly equal ranges here
        assert nearest_panorama(ANCHOR, [a, b]).id == "a"

    def test_empty(self):
        with pytest.raises(EmptyIndex):
            nearest_panorama(ANCHOR, [])

    def test_grid_matches_brute_force(self):
        rng = np.random.default_rng(2)
        cams = []
        for i in range(10):
            for j in range(10):
                lat = ANCHOR.lat + i * 15 / 6378137.0
                lng = ANCHOR.lng + j * 15 / (6378137.0 * math.cos(ANCHOR.lat))
                cams.append(CameraPose(f"c{i:02d}{j:02d}", GeoPoint(lat, lng), 0.0))
        for _ in range(300):
            t = GeoPoint(ANCHOR.lat + rng.uniform(0, 150) / 6378137.0,
                         ANCHOR.lng + rng.uniform(0, 150) / (6378137.0 * math.cos(ANCHOR.lat)))
            best = min(cams, key=lambda c: (math.hypot(*enu_arrays(t.lat, t.lng, c.geo.lat, c.geo.lng)), c.id))
            assert nearest_panorama(t, cams).id == best.id


class TestDetections:
    def records(self, rng, n):
        out = []
        for i in range(n):
            k = tuple(float(v) for v in rng.uniform(0, 3, 4))
            a, s, sp, m = (float(v) for v in rng.normal(size=4))
            score = k[0] * a + k[1] * s + k[2] * sp + k[3] * m
            geo = GeoPoint(ANCHOR.lat + float(rng.uniform(-1e-3, 1e-3)), ANCHOR.lng + float(rng.uniform(-1e-3, 1e-3)))
            out.append(DetectionRecord(f"d{i}", geo, score, a, s, sp, m, k, None))
        return out

    def test_empty(self, tmp_path):
        p = tmp_path / "d.geojson"
        write_detections([], p)
        assert json.loads(p.read_text()) == {"type": "FeatureCollection", "features": []}
        assert read_detections(p) == []

    def test_large_round_trip_hash(self, tmp_path):
        recs = self.records(np.random.default_rng(3), 10_000)
        p = tmp_path / "d.geojson"
        write_detections(recs, p)
        back = read_detections(p)
        assert back == recs
        q = tmp_path / "e.geojson"
        write_detections(back, q)
        assert hashlib.sha256(p.read_bytes()).digest() == hashlib.sha256(q.read_bytes()).digest()

    def test_weighted_sum(self):
        for r in self.records(np.random.default_rng(4), 100):
            assert r.weighted_sum() == pytest.approx(r.score, abs=1e-9)

    def test_not_geojson(self, tmp_path):
        p = tmp_path / "d.geojson"
        p.write_text('{"type": "Feature"}')
        with pytest.raises(ParseError):
            read_detections(p)


@settings(max_examples=200)
@given(st.floats(-85.0, 85.0, allow_nan=False), st.floats(-180.0, 179.999, allow_nan=False))
def test_exact_degrees_round_trip(lat_deg, lng_deg):
    p = GeoPoint.from_degrees(lat_deg, lng_deg)
    assert math.radians(exact_degrees(p.lat)) == p.lat
    assert GeoPoint.from_degrees(exact_degrees(p.lat), exact_degrees(p.lng)) == p
