import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from PIL import Image as PILImage

from sonarsynth.imagemodel import (
    BoundingBox,
    ContentEntry,
    DatasetManifest,
    Image,
    ManifestError,
    load_image,
    load_manifest,
    save_image,
    save_manifest,
)


def _png(path, arr):
    PILImage.fromarray(arr).save(path)
    return path


class TestImage:
    def test_shapes_and_channels(self):
        img = Image(np.zeros((4, 5)))
        assert (img.height, img.width, img.channels) == (4, 5, 1)
        assert Image(np.ones((2, 3, 3))).channels == 3

    @pytest.mark.parametrize("bad", [np.full((2, 2), 1.5), np.full((2, 2), -0.1), np.full((2, 2), np.nan)])
    def test_rejects_out_of_range(self, bad):
        with pytest.raises(ValueError):
            Image(bad)

    def test_rejects_two_channels(self):
        with pytest.raises(ValueError):
            Image(np.zeros((3, 3, 2)))

    def test_immutable(self):
        img = Image(np.zeros((2, 2)))
        with pytest.raises(ValueError):
            img.data[0, 0, 0] = 1.0

    @given(arrays(np.float64, (3, 4), elements=st.floats(-2, 2)))
    def test_construction_matches_range_check(self, arr):
        inside = arr.min() >= 0 and arr.max() <= 1
        if inside:
            img = Image(arr)
            assert img.data.min() >= 0 and img.data.max() <= 1
        else:
            with pytest.raises(ValueError):
                Image(arr)


class TestLoadSave:
    def test_8bit_extremes(self, tmp_path):
        p = _png(tmp_path / "a.png", np.array([[0, 255]], dtype=np.uint8))
        img = load_image(p)
        assert img.data[0, 0, 0] == 0.0
        assert img.data[0, 1, 0] == 1.0

    def test_16bit_linear_map(self, tmp_path):
        p = _png(tmp_path / "a.png", np.array([[32768, 65535, 0]], dtype=np.uint16))
        img = load_image(p)
        assert img.channels == 1
        assert img.data[0, 0, 0] == pytest.approx(32768 / 65535, abs=1e-12)
        assert img.data[0, 0, 0] == pytest.approx(0.50001, abs=1e-5)
        assert img.data[0, 1, 0] == 1.0

    def test_rgb_channels_preserved(self, tmp_path):
        arr = np.zeros((2, 2, 3), dtype=np.uint8)
        arr[..., 0] = 255
        img = load_image(_png(tmp_path / "rgb.png", arr))
        assert img.channels == 3
        assert img.data[..., 0].min() == 1.0 and img.data[..., 1].max() == 0.0

    def test_missing_file_names_path(self, tmp_path):
        with pytest.raises(FileNotFoundError, match="nope.png"):
            load_image(tmp_path / "nope.png")

    def test_unsupported_format(self, tmp_path):
        p = tmp_path / "a.bmp"
        PILImage.fromarray(np.zeros((2, 2), dtype=np.uint8)).save(p, format="BMP")
        with pytest.raises(ValueError, match="a.bmp"):
            load_image(p)

    def test_unsupported_mode(self, tmp_path):
        p = tmp_path / "rgba.png"
        PILImage.fromarray(np.zeros((2, 2, 4), dtype=np.uint8)).save(p)
        with pytest.raises(ValueError, match="rgba.png"):
            load_image(p)

    def test_half_grey_quantizes(self, tmp_path):
        save_image(Image(np.full((3, 3), 0.5)), tmp_path / "g.png")
        raw = np.asarray(PILImage.open(tmp_path / "g.png"))
        assert set(np.unique(raw)) <= {127, 128}

    def test_zero_image(self, tmp_path):
        save_image(Image(np.zeros((3, 3, 3))), tmp_path / "z.png")
        assert np.asarray(PILImage.open(tmp_path / "z.png")).max() == 0

    def test_unwritable_path(self, tmp_path):
        with pytest.raises(OSError):
            save_image(Image(np.zeros((2, 2))), tmp_path / "missing_dir" / "x.png")

    @settings(max_examples=40, deadline=None)
    @given(
        arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6), st.sampled_from([1, 3])),
               elements=st.floats(0, 1)),
    )
    def test_round_trip_within_one_level(self, tmp_path_factory, arr):
        p = tmp_path_factory.mktemp("rt") / "x.png"
        img = Image(arr)
        save_image(img, p)
        back = load_image(p)
        assert back.shape == img.shape
        assert np.max(np.abs(back.data - img.data)) <= 1 / 255 + 1e-12


@pytest.fixture
def image_files(tmp_path):
    paths = []
    for i in range(4):
        p = tmp_path / f"im{i}.png"
        _png(p, np.zeros((4, 4), dtype=np.uint8))
        paths.append(p.name)
    return tmp_path, paths


def _write(path, doc):
    path.write_text(json.dumps(doc))
    return path


class TestManifest:
    def test_two_styles(self, image_files):
        d, names = image_files
        m = load_manifest(_write(d / "m.json", {
            "content": [{"path": names[0], "boxes": [[1, 1, 3, 3, 0]]}],
            "styles": [{"id": 1, "paths": [names[1]]}, {"id": 0, "paths": [names[2], names[3]]}],
        }))
        assert m.n_styles == 2
        assert [p.name for p in m.styles[0]] == [names[2], names[3]]
        assert m.content[0].boxes == (BoundingBox(1, 1, 3, 3, 0),)

    def test_non_contiguous_ids(self, image_files):
        d, names = image_files
        doc = {"content": [{"path": names[0]}],
               "styles": [{"id": 0, "paths": [names[1]]}, {"id": 2, "paths": [names[2]]}]}
        with pytest.raises(ManifestError, match="non-contiguous style ids"):
            load_manifest(_write(d / "m.json", doc))

    def test_empty_content(self, image_files):
        d, names = image_files
        with pytest.raises(ManifestError, match="no content entries"):
            load_manifest(_write(d / "m.json", {"content": [], "styles": []}))

    def test_empty_content_allowed_on_request(self, image_files):
        d, _ = image_files
        m = load_manifest(_write(d / "m.json", {"content": []}), require_content=False)
        assert len(m) == 0 and m.n_styles == 0

    def test_dangling_path(self, image_files):
        d, _ = image_files
        with pytest.raises(ManifestError, match="dangling"):
            load_manifest(_write(d / "m.json", {"content": [{"path": "ghost.png"}]}))

    @pytest.mark.parametrize("record", [{"boxes": []}, "x", {"path": "im0.png", "boxes": [[3, 3, 1, 1]]}])
    def test_malformed_record(self, image_files, record):
        d, _ = image_files
        with pytest.raises(ManifestError):
            load_manifest(_write(d / "m.json", {"content": [record]}))

    def test_invalid_json(self, tmp_path):
        (tmp_path / "m.json").write_text("{not json")
        with pytest.raises(ManifestError, match="invalid JSON"):
            load_manifest(tmp_path / "m.json")

    def test_save_load_round_trip(self, image_files):
        d, names = image_files
        m = DatasetManifest(
            content=[ContentEntry((d / names[0]).resolve(), (BoundingBox(0.5, 1, 2, 3.25, 0),))],
            styles=[[(d / names[1]).resolve()], [(d / names[2]).resolve()]],
        )
        save_manifest(m, d / "out.json")
        doc = json.loads((d / "out.json").read_text())
        assert doc["content"][0]["path"] == names[0]
        assert load_manifest(d / "out.json") == m


class TestBoundingBox:
    def test_degenerate_rejected(self):
        with pytest.raises(ValueError):
            BoundingBox(1, 1, 1, 2)

    def test_clamp(self):
        assert BoundingBox(-2, -1, 5, 20).clamp(4, 10) == BoundingBox(0, 0, 4, 10)
        assert BoundingBox(5, 5, 8, 8).clamp(4, 4) is None
