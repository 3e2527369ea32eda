import base64
import json

import numpy as np
import pytest
import torch
from fastapi.testclient import TestClient

from csdmt import cli, service
from csdmt.errors import DataError
from csdmt.facedata import make_sample, save_sample
from csdmt.networks import ArchConfig, build_models, save_checkpoint
from csdmt.service import (ModelRegistry, create_app, decode_png, encode_png,
                           run_operation)
from csdmt.trainer import MakeupPipeline


SIZE = 32


@pytest.fixture(scope="module")
def checkpoint(tmp_path_factory):
    root = tmp_path_factory.mktemp("ckpt")
    cfg = ArchConfig(size=SIZE, seed=0)
    path = save_checkpoint(root / "model.pt", build_models(cfg), cfg)
    return path


@pytest.fixture(scope="module")
def client(checkpoint):
    registry = ModelRegistry({"default": checkpoint})
    return TestClient(create_app(registry))


@pytest.fixture(scope="module")
def pipeline(checkpoint):
    from csdmt.networks import models_from_checkpoint
    models, cfg, _ = models_from_checkpoint(checkpoint)
    models["esc"].eval()
    models["gmr"].eval()
    return MakeupPipeline(models["esc"], models["gmr"], cfg.d)


def synth_ref(index, makeup):
    return {"synth": {"seed": 0, "index": index, "makeup": makeup}}


class TestPngCodec:
    def test_round_trip_is_lossless_for_quantized_images(self):
        rng = np.random.default_rng(0)
        img = np.rint(rng.random((16, 16, 3)) * 255) / 255.0
        again = decode_png(encode_png(img))
        np.testing.assert_allclose(again, img, atol=1e-7)

    def test_deterministic_bytes(self):
        img = torch.rand(16, 16, 3, generator=torch.Generator().manual_seed(1))
        assert encode_png(img) == encode_png(img.clone())


class TestRunOperation:
    def test_unknown_op_and_missing_refs(self, pipeline):
        x = make_sample(0, 0, False, SIZE)
        y = make_sample(0, 0, True, SIZE)
        with pytest.raises(DataError):
            run_operation("sparkle", pipeline, x, [y])
        with pytest.raises(DataError):
            run_operation("transfer", pipeline, x, [])
        with pytest.raises(DataError):
            run_operation("skin", pipeline, x, [y])  # beta missing
        with pytest.raises(DataError):
            run_operation("partial", pipeline, x, [y])  # needs 3 refs


class TestHealth:
    def test_health(self, client):
        r = client.get("/health")
        assert r.status_code == 200
        body = r.json()
        assert body["status"] == "ok"
        assert body["models"] == ["default"]
        assert body["schema_version"] == "csdmt-api-v1"


class TestTransferEndpoint:
    def test_synth_transfer(self, client):
        r = client.post("/transfer", json={"source": synth_ref(0, False),
                                           "references": [synth_ref(0, True)]})
        assert r.status_code == 200
        body = r.json()
        assert body["schema_version"] == "csdmt-api-v1"
        out = decode_png(base64.b64decode(body["result_png_b64"]))
        assert out.shape == (SIZE, SIZE, 3)
        lf = decode_png(base64.b64decode(body["deformed_lf_png_b64"]))
        assert lf.shape == (SIZE // 2, SIZE // 2, 3)
        assert body["timing_ms"] > 0

    def test_http_matches_direct_pipeline_bytes(self, client, pipeline):
        r = client.post("/transfer", json={"source": synth_ref(1, False),
                                           "references": [synth_ref(2, True)]})
        x = make_sample(0, 1, False, SIZE)
        y = make_sample(0, 2, True, SIZE)
        direct = run_operation("transfer", pipeline, x, [y])
        expect = base64.b64encode(encode_png(direct.image)).decode()
        assert r.json()["result_png_b64"] == expect

    def test_explicit_png_payload(self, client):
        x = make_sample(0, 3, False, SIZE)
        y = make_sample(0, 3, True, SIZE)

        def encode_pair(s):
            img = base64.b64encode(encode_png(s.image)).decode()
            import io
            from PIL import Image as PILImage
            buf = io.BytesIO()
            PILImage.fromarray(s.parsing, mode="L").save(buf, format="PNG")
            return {"png_b64": img,
                    "parsing_b64": base64.b64encode(buf.getvalue()).decode()}

        r = client.post("/transfer", json={"source": encode_pair(x),
                                           "references": [encode_pair(y)]})
        assert r.status_code == 200


class TestValidation:
    def test_missing_parsing_rejected(self, client):
        x = make_sample(0, 0, False, SIZE)
        payload = {"png_b64": base64.b64encode(encode_png(x.image)).decode()}
        r = client.post("/transfer", json={"source": payload,
                                           "references": [synth_ref(0, True)]})
        assert r.status_code == 400
        assert "parsing" in r.json()["detail"]

    def test_bad_base64(self, client):
        r = client.post("/transfer", json={
            "source": {"png_b64": "!!!not-base64!!!", "parsing_b64": "x"},
            "references": [synth_ref(0, True)]})
        assert r.status_code == 400

    def test_wrong_size_image(self, client):
        big = np.zeros((SIZE * 2, SIZE * 2, 3))
        r = client.post("/transfer", json={
            "source": {"png_b64": base64.b64encode(encode_png(big)).decode(),
                       "parsing_b64": "x"},
            "references": [synth_ref(0, True)]})
        assert r.status_code == 400

    def test_unknown_model_id(self, client):
        r = client.post("/transfer", json={"source": synth_ref(0, False),
                                           "references": [synth_ref(0, True)],
                                           "model_id": "missing"})
        assert r.status_code == 404

    def test_oversize_payload(self, client):
        blob = base64.b64encode(b"\x00" * (service.MAX_IMAGE_BYTES + 1)).decode()
        r = client.post("/transfer", json={
            "source": {"png_b64": blob, "parsing_b64": "x"},
            "references": [synth_ref(0, True)]})
        assert r.status_code == 400
        assert "exceeds" in r.json()["detail"]


class TestControlEndpoints:
    def test_interpolate_beta_clamp_warning(self, client):
        r = client.post("/interpolate", json={
            "source": synth_ref(0, False),
            "references": [synth_ref(0, True), synth_ref(1, True)],
            "beta": 1.5})
        assert r.status_code == 200
        assert any("clamped" in w for w in r.json()["warnings"])
        at1 = client.post("/interpolate", json={
            "source": synth_ref(0, False),
            "references": [synth_ref(0, True), synth_ref(1, True)],
            "beta": 1.0})
        assert r.json()["result_png_b64"] == at1.json()["result_png_b64"]

    def test_interp_local_requires_region(self, client):
        r = client.post("/interpolate-local", json={
            "source": synth_ref(0, False),
            "references": [synth_ref(0, True), synth_ref(1, True)],
            "beta": 0.5})
        assert r.status_code == 400

    def test_partial_and_removal_and_skin(self, client):
        refs = [synth_ref(i, True) for i in range(3)]
        ops = [("/partial", {"references": refs}),
               ("/removal", {"references": [synth_ref(0, False)]}),
               ("/skin", {"references": [synth_ref(1, True)], "beta": 0.5})]
        for route, extra in ops:
            payload = {"source": synth_ref(0, False)}
            payload.update(extra)
            r = client.post(route, json=payload)
            assert r.status_code == 200, (route, r.text)

    def test_edit_transfer_uses_painted_pixels(self, client):
        y = make_sample(0, 0, True, SIZE)
        edited = y.image.copy()
        edited[..., 2] = 1.0
        ref = dict(synth_ref(0, True))
        ref["png_b64"] = base64.b64encode(encode_png(edited)).decode()
        r1 = client.post("/edit-transfer", json={"source": synth_ref(0, False),
                                                 "references": [ref]})
        r2 = client.post("/edit-transfer", json={"source": synth_ref(0, False),
                                                 "references": [synth_ref(0, True)]})
        assert r1.status_code == 200
        assert r1.json()["result_png_b64"] != r2.json()["result_png_b64"]


class TestCli:
    def test_synth_data_deterministic(self, tmp_path, capsys):
        for name in ("a", "b"):
            code = cli.main(["synth-data", "--out", str(tmp_path / name),
                             "--n", "2", "--size", "32", "--seed", "7"])
            assert code == 0
        for sub in ("images/non-makeup", "images/makeup"):
            for f in sorted((tmp_path / "a" / sub).glob("*.png")):
                twin = tmp_path / "b" / sub / f.name
                assert twin.read_bytes() == f.read_bytes()

    def test_usage_error_exit_2(self, capsys):
        assert cli.main(["infer", "--out", "x.png"]) == 2

    def test_unknown_subcommand_exit_2(self, capsys):
        assert cli.main(["frobnicate"]) == 2

    def test_runtime_error_exit_1(self, tmp_path, capsys):
        code = cli.main(["train", "--config", str(tmp_path / "missing.json")])
        assert code == 1
        assert "error:" in capsys.readouterr().err

    def test_infer_matches_http_bytes(self, tmp_path, checkpoint, client, capsys):
        x = make_sample(0, 5, False, SIZE)
        y = make_sample(0, 6, True, SIZE)
        x_img, x_par = save_sample(x, tmp_path)
        y_img, y_par = save_sample(y, tmp_path)
        out = tmp_path / "out.png"
        code = cli.main(["infer", "--checkpoint", str(checkpoint),
                         "--source", str(x_img), "--source-parsing", str(x_par),
                         "--reference", str(y_img), "--reference-parsing", str(y_par),
                         "--out", str(out)])
        assert code == 0

        def b64_of(path):
            return base64.b64encode(encode_png(decode_png(path.read_bytes()))).decode()

        r = client.post("/transfer", json={
            "source": {"png_b64": base64.b64encode(x_img.read_bytes()).decode(),
                       "parsing_b64": base64.b64encode(x_par.read_bytes()).decode()},
            "references": [{"png_b64": base64.b64encode(y_img.read_bytes()).decode(),
                            "parsing_b64": base64.b64encode(y_par.read_bytes()).decode()}]})
        assert r.status_code == 200
        assert base64.b64decode(r.json()["result_png_b64"]) == out.read_bytes()

    def test_control_removal_writes_files(self, tmp_path, checkpoint, capsys):
        x = make_sample(0, 7, True, SIZE)
        y = make_sample(0, 7, False, SIZE)
        x_img, x_par = save_sample(x, tmp_path)
        y_img, y_par = save_sample(y, tmp_path)
        out, lf_out = tmp_path / "removed.png", tmp_path / "lf.png"
        code = cli.main(["control", "--checkpoint", str(checkpoint),
                         "--op", "removal",
                         "--source", str(x_img), "--source-parsing", str(x_par),
                         "--reference", str(y_img), "--reference-parsing", str(y_par),
                         "--out", str(out), "--lf-out", str(lf_out)])
        assert code == 0
        assert out.is_file() and lf_out.is_file()

    def test_checkpoint_env_default(self, tmp_path, checkpoint, monkeypatch, capsys):
        monkeypatch.setenv(cli.ENV_CHECKPOINT, str(checkpoint))
        x = make_sample(0, 8, False, SIZE)
        y = make_sample(0, 8, True, SIZE)
        x_img, x_par = save_sample(x, tmp_path)
        y_img, y_par = save_sample(y, tmp_path)
        out = tmp_path / "env_out.png"
        code = cli.main(["infer",
                         "--source", str(x_img), "--source-parsing", str(x_par),
                         "--reference", str(y_img), "--reference-parsing", str(y_par),
                         "--out", str(out)])
        assert code == 0 and out.is_file()

    def test_eval_command_writes_report(self, tmp_path, checkpoint, capsys):
        report = tmp_path / "report.json"
        code = cli.main(["eval", "--checkpoint", str(checkpoint),
                         "--scenario", "crop", "--n", "2", "--seed", "3",
                         "--out", str(report)])
        assert code == 0
        payload = json.loads(report.read_text())
        assert payload["sample_count"] == 2
        assert "PSNR" in capsys.readouterr().out


class TestRegistryReload:
    def test_reload_swaps_models(self, tmp_path):
        cfg = ArchConfig(size=SIZE, seed=1)
        path = save_checkpoint(tmp_path / "m.pt", build_models(cfg), cfg)
        registry = ModelRegistry({"default": path})
        first, _ = registry.get("default")
        cfg2 = ArchConfig(size=SIZE, seed=2)
        save_checkpoint(path, build_models(cfg2), cfg2)
        registry.reload()
        second, _ = registry.get("default")
        assert first is not second
