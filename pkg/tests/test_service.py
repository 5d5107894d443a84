import threading

import numpy as np
import pytest
from fastapi.testclient import TestClient

from anglekit.dataset import synth_vessel
from anglekit.geometry import LineSegment, angle_from_endpoints
from anglekit.imaging import save_image
from anglekit.service import LABEL_HEADER, create_app


@pytest.fixture
def image_dir(tmp_path):
    d = tmp_path / "images"
    d.mkdir()
    for i, theta in enumerate((30.0, 75.0, 120.0)):
        img = synth_vessel(theta, size=(60, 50), noise_level=0.0).image
        save_image(img, d / f"img{i:03d}.pgm")
    save_image(np.full((20, 25), 0.5), d / "extra.png")
    return d


@pytest.fixture
def service(tmp_path, image_dir):
    labels = tmp_path / "labels.csv"
    app = create_app(image_dir, labels)
    return TestClient(app), labels, image_dir


class TestListImages:
    def test_empty_directory(self, tmp_path):
        empty = tmp_path / "none"
        empty.mkdir()
        client = TestClient(create_app(empty, tmp_path / "l.csv"))
        assert client.get("/api/images").json() == []

    def test_listing_sorted_with_dims(self, service):
        client, _, _ = service
        items = client.get("/api/images").json()
        assert [i["image_id"] for i in items] == ["extra", "img000", "img001", "img002"]
        assert items[1] == {"image_id": "img000", "width": 60, "height": 50,
                            "labeled": False}
        assert items[0]["width"] == 25 and items[0]["height"] == 20

    def test_labeled_flag_flips_after_post(self, service):
        client, _, _ = service
        assert not client.get("/api/images").json()[1]["labeled"]
        r = client.post("/api/images/img000/label",
                        json={"x1": 10, "y1": 5, "x2": 10, "y2": 45})
        assert r.status_code == 200
        flags = {i["image_id"]: i["labeled"] for i in client.get("/api/images").json()}
        assert flags["img000"] is True
        assert flags["img001"] is False


class TestGetImage:
    def test_png_bytes(self, service):
        client, _, _ = service
        r = client.get("/api/images/img000")
        assert r.status_code == 200
        assert r.headers["content-type"] == "image/png"
        assert r.content[:8] == b"\x89PNG\r\n\x1a\n"

    def test_unknown_image_404(self, service):
        client, _, _ = service
        assert client.get("/api/images/nope").status_code == 404


class TestSubmitLabel:
    def test_vertical_segment_reads_zero(self, service):
        client, _, _ = service
        r = client.post("/api/images/img000/label",
                        json={"x1": 10, "y1": 5, "x2": 10, "y2": 45})
        assert r.status_code == 200
        assert r.json()["theta_deg"] == pytest.approx(0.0, abs=1e-9)

    def test_diagonal_reads_45(self, service):
        client, _, _ = service
        r = client.post("/api/images/img000/label",
                        json={"x1": 0, "y1": 0, "x2": 40, "y2": 40})
        assert r.json()["theta_deg"] == pytest.approx(45.0, abs=1e-6)

    def test_resubmission_overwrites(self, service):
        client, labels, _ = service
        client.post("/api/images/img000/label",
                    json={"x1": 10, "y1": 5, "x2": 10, "y2": 45})
        client.post("/api/images/img000/label",
                    json={"x1": 0, "y1": 10, "x2": 50, "y2": 10})
        csv_text = client.get("/api/labels").text
        rows = [line for line in csv_text.splitlines()[1:] if line]
        assert len(rows) == 1
        assert rows[0].startswith("img000,")
        assert float(rows[0].split(",")[5]) == pytest.approx(90.0)

    def test_unknown_image_404(self, service):
        client, _, _ = service
        r = client.post("/api/images/ghost/label",
                        json={"x1": 0, "y1": 0, "x2": 1, "y2": 1})
        assert r.status_code == 404

    def test_degenerate_segment_rejected_with_reason(self, service):
        client, _, _ = service
        r = client.post("/api/images/img000/label",
                        json={"x1": 5, "y1": 5, "x2": 5, "y2": 5})
        assert r.status_code == 422
        assert "coincide" in r.json()["detail"]

    def test_out_of_bounds_rejected_with_reason(self, service):
        client, _, _ = service
        r = client.post("/api/images/img000/label",
                        json={"x1": -2, "y1": 0, "x2": 10, "y2": 10})
        assert r.status_code == 422
        assert "bounds" in r.json()["detail"]
        r = client.post("/api/images/img000/label",
                        json={"x1": 0, "y1": 0, "x2": 100, "y2": 10})
        assert r.status_code == 422

    def test_record_on_disk_before_response(self, service):
        client, labels, _ = service
        r = client.post("/api/images/img001/label",
                        json={"x1": 1, "y1": 2, "x2": 30, "y2": 40})
        assert r.status_code == 200
        text = labels.read_text()
        assert "img001" in text  # persisted before the response was sent

    def test_concurrent_posts_to_different_images_keep_both(self, service):
        client, _, _ = service
        results = {}

        def post(image_id, x2):
            results[image_id] = client.post(
                f"/api/images/{image_id}/label",
                json={"x1": 0, "y1": 0, "x2": x2, "y2": 30},
            ).status_code

        threads = [
            threading.Thread(target=post, args=("img000", 10)),
            threading.Thread(target=post, args=("img001", 20)),
        ]
        for t in threads:
            t.start()
        for t in threads:
            t.join()
        assert results == {"img000": 200, "img001": 200}
        csv_text = client.get("/api/labels").text
        assert "img000" in csv_text and "img001" in csv_text


class TestExportLabels:
    def test_header_only_when_empty(self, service):
        client, _, _ = service
        r = client.get("/api/labels")
        assert r.status_code == 200
        assert r.headers["content-type"].startswith("text/csv")
        assert r.text == LABEL_HEADER + "\n"

    def test_sorted_by_image_id(self, service):
        client, _, _ = service
        for image_id in ("img002", "img000", "img001"):
            client.post(f"/api/images/{image_id}/label",
                        json={"x1": 0, "y1": 0, "x2": 10, "y2": 10})
        rows = client.get("/api/labels").text.splitlines()[1:]
        assert [r.split(",")[0] for r in rows] == ["img000", "img001", "img002"]

    def test_export_restart_export_byte_identical(self, tmp_path, image_dir):
        labels = tmp_path / "labels.csv"
        client1 = TestClient(create_app(image_dir, labels))
        client1.post("/api/images/img000/label",
                     json={"x1": 3.25, "y1": 4.5, "x2": 31.125, "y2": 7.75})
        client1.post("/api/images/img002/label",
                     json={"x1": 0, "y1": 0, "x2": 11, "y2": 44})
        first = client1.get("/api/labels").content
        # simulate a restart: fresh app over the same files
        client2 = TestClient(create_app(image_dir, labels))
        second = client2.get("/api/labels").content
        assert first == second
        flags = {i["image_id"]: i["labeled"] for i in client2.get("/api/images").json()}
        assert flags["img000"] and flags["img002"] and not flags["img001"]

    def test_stored_theta_recomputable_from_endpoints(self, service):
        client, _, _ = service
        client.post("/api/images/img000/label",
                    json={"x1": 5.5, "y1": 9.25, "x2": 48.0, "y2": 31.5})
        client.post("/api/images/img001/label",
                    json={"x1": 0, "y1": 40, "x2": 55, "y2": 3})
        for line in client.get("/api/labels").text.splitlines()[1:]:
            image_id, x1, y1, x2, y2, theta = line.split(",")
            recomputed = angle_from_endpoints(
                LineSegment(float(x1), float(y1), float(x2), float(y2))
            )
            assert abs(recomputed - float(theta)) <= 1e-6


class TestVelocityEndpoint:
    def test_conversion(self, service):
        client, _, _ = service
        r = client.post("/api/velocity",
                        json={"fd": 1000, "f0": 5e6, "c": 1540, "theta_deg": 0})
        assert r.status_code == 200
        assert r.json()["velocity_m_s"] == pytest.approx(0.154)

    def test_singular_angle_422(self, service):
        client, _, _ = service
        r = client.post("/api/velocity",
                        json={"fd": 1000, "f0": 5e6, "c": 1540, "theta_deg": 90})
        assert r.status_code == 422


class TestRoot:
    def test_fallback_page_without_ui(self, service):
        client, _, _ = service
        r = client.get("/")
        assert r.status_code == 200
        assert "annotation" in r.text

    def test_static_ui_served_when_present(self, tmp_path, image_dir):
        ui = tmp_path / "dist"
        ui.mkdir()
        (ui / "index.html").write_text("<html><body>ui bundle</body></html>")
        client = TestClient(create_app(image_dir, tmp_path / "l.csv", ui_dir=ui))
        r = client.get("/")
        assert "ui bundle" in r.text
        # API routes still take precedence over the static mount
        assert client.get("/api/images").status_code == 200
