import pytest

from src.config import (OutputConfig, SimConfig, build_scene, build_sensor, config_hash, default_config_toml,
                        load_config, match_settings, motion_spec, noise_config, post_settings, render_settings,
                        write_default_config)
from src.errors import AssetNotFoundError, ConfigError

CHEAP_PATTERN = {"sensor.pattern_side_px": 64}


def test_defaults_are_the_vga_device():
    cfg = load_config()
    assert (cfg.sensor.camera.width, cfg.sensor.camera.height) == (640, 480)
    assert cfg.sensor.camera.fx == 580.0
    assert cfg.sensor.baseline_m == 0.075
    assert cfg.sensor.depth_range_m == (0.4, 8.0)
    assert cfg.sensor.subpixel_denominator == 8
    assert cfg.sensor.ir_bit_depth == 10
    assert cfg.matcher.uniqueness_ratio == 0.8
    assert cfg.post.kernel_px == 3


def test_default_file_round_trips(tmp_path):
    path = write_default_config(tmp_path / "slsim.toml")
    assert load_config(path).model_dump() == SimConfig().model_dump()
    assert "[sensor.camera]" in default_config_toml()


def test_overrides_use_dotted_keys():
    cfg = load_config(overrides={"sensor.baseline_m": 0.05, "seed": 11})
    assert cfg.sensor.baseline_m == 0.05
    assert cfg.seed == 11


def test_validation_error_names_the_field():
    with pytest.raises(ConfigError) as err:
        load_config(overrides={"sensor.baseline_m": -1.0})
    assert "sensor.baseline_m" in str(err.value)
    assert err.value.exit_code == 2


def test_unknown_keys_are_rejected():
    with pytest.raises(ConfigError):
        load_config(overrides={"sensor.baseline": 0.05})


def test_object_needs_exactly_one_source():
    with pytest.raises(ConfigError):
        load_config(overrides={"scene.objects": [{"mesh": "a.obj", "primitive": "box"}]})


def test_missing_and_malformed_files(tmp_path):
    with pytest.raises(AssetNotFoundError):
        load_config(tmp_path / "absent.toml")
    bad = tmp_path / "bad.toml"
    bad.write_text("seed = [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_relative_paths_resolve_next_to_file(tmp_path):
    path = tmp_path / "run" / "cfg.toml"
    path.parent.mkdir()
    path.write_text("seed = 1\n")
    assert load_config(path).resolve("meshes/a.obj") == tmp_path / "run" / "meshes" / "a.obj"


def test_config_hash_ignores_output_only():
    base = load_config()
    assert config_hash(base) == config_hash(load_config(overrides={"output.jobs": 4, "output.out_dir": "x"}))
    assert config_hash(base) != config_hash(load_config(overrides={"seed": 1}))


def test_env_sets_output_defaults(monkeypatch):
    monkeypatch.setenv("SLSIM_JOBS", "3")
    monkeypatch.setenv("SLSIM_OUT", "/tmp/elsewhere")
    out = OutputConfig()
    assert out.jobs == 3
    assert out.out_dir == "/tmp/elsewhere"


def test_build_sensor_from_defaults():
    sensor = build_sensor(load_config(overrides=CHEAP_PATTERN))
    assert sensor.camera.shape == (480, 640)
    assert sensor.fb == pytest.approx(43.5)
    assert sensor.pattern.side_px == 64


def test_invalid_sensor_becomes_config_error():
    with pytest.raises(ConfigError, match="sensor"):
        build_sensor(load_config(overrides={**CHEAP_PATTERN, "sensor.window_size_px": 8}))


def test_build_scene_default_target():
    scene = build_scene(load_config())
    assert len(scene.instances) == 1
    assert scene.instances[0].role == "target"


def test_build_scene_with_primitives_and_lights():
    cfg = load_config(overrides={
        "scene.objects": [
            {"primitive": "box", "size_m": [0.2, 0.3, 0.4], "position_m": [0, 0, 1]},
            {"primitive": "plane", "size_m": [5.0], "role": "background", "normal_map": "bumpy"},
        ],
        "render.lights": [{"kind": "directional", "vector": [0, 0, 1], "power": 0.2}],
        "render.ambient_light": 0.05,
    })
    scene = build_scene(cfg)
    assert [i.role for i in scene.instances] == ["target", "background"]
    assert scene.instances[1].mesh.normal_map is not None
    assert scene.ambient_light == 0.05
    assert scene.extra_lights[0].power == 0.2


def test_stage_settings_follow_config():
    cfg = load_config(overrides={"render.pixel_jitter": 0.25, "noise.gaussian_sigma": 0.0,
                                 "matcher.subpixel_method": "equiangular", "post.fill_holes": False,
                                 "motion.mode": "vibration", "motion.amplitude_m": 0.002})
    assert render_settings(cfg, seed=3, jobs=2).pixel_jitter == 0.25
    assert noise_config(cfg, seed=4).seed == 4
    assert match_settings(cfg, jobs=2).subpixel_method == "equiangular"
    assert not post_settings(cfg).fill_holes
    assert motion_spec(cfg, seed=5).amplitude == 0.002
