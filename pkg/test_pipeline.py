"""
Test script for configuration, manifests, augmentation, inference, evaluation, benchmarking and the CLI
"""
import sys
import os
import dataclasses
import functools
import json
import tempfile

# Add parent directory to path
sys.path.append(os.path.dirname(os.path.abspath(__file__)))

import numpy as np
import pytest
from scipy import ndimage

from autolabel.synth import RadarReturn
from config import DESK_CONFIG
from detector.types import FrameLabels, GroundTruthLane, VehicleBox
from exceptions import EXIT_NUMERIC, EXIT_OK, EXIT_VALIDATION, ConfigurationError, NumericError, exit_code_for
from main import main as cli_main
from pipeline.augment import apply_homography, augment, check_invertible, perspective_homography, warp_image
from pipeline.bench import run_bench
from pipeline.dataset import FrameRecord, load_dataset, write_image, write_manifest
from pipeline.evaluate import run_eval
from pipeline.infer import read_detections, run_infer, validate_detection
from pipeline.labeling import run_synth
from pipeline.run_config import TrainConfig, load_run_config, parse_run_config
from pipeline.train import Trainer
from pipeline.visualize import depth_color, run_render


def _desk_json() -> dict:
    with open(DESK_CONFIG, 'r', encoding='utf-8') as f:
        data = json.load(f)
    data['scenes'] = 1
    data['synth']['frames'] = 2
    return data


@functools.lru_cache(maxsize=None)
def _dataset():
    """One small synthetic scene on disk with an untrained checkpoint, built once per session"""
    root = tempfile.mkdtemp(prefix='hpk_test_')
    config_path = os.path.join(root, 'run.json')
    with open(config_path, 'w', encoding='utf-8') as f:
        json.dump(_desk_json(), f)
    config = load_run_config(config_path)
    manifest = run_synth(config, os.path.join(root, 'data'), show_progress=False)
    checkpoint = os.path.join(root, 'initial.hpkw')
    Trainer(config, []).save(checkpoint)
    return root, config_path, config, manifest, checkpoint


def _write_config(tmp_path, data) -> str:
    path = tmp_path / 'config.json'
    path.write_text(json.dumps(data))
    return str(path)


def test_config_rejects_unknown_keys_with_key_path(tmp_path):
    data = _desk_json()
    data['bogus'] = 1
    with pytest.raises(ConfigurationError, match='bogus'):
        load_run_config(_write_config(tmp_path, data))

    data = _desk_json()
    data['train']['lr'] = 0.1
    with pytest.raises(ConfigurationError, match=r'train: unknown keys'):
        parse_run_config(data)

    data = _desk_json()
    data['train']['batch_size'] = 'four'
    with pytest.raises(ConfigurationError, match=r'train\.batch_size'):
        parse_run_config(data)

    data = _desk_json()
    data['architecture'][0]['kernel'] = 0
    with pytest.raises(ConfigurationError, match=r'architecture\[0\]'):
        parse_run_config(data)

    data = _desk_json()
    data['cameras']['front']['focal'] = -1.0
    with pytest.raises(ConfigurationError, match='cameras.front'):
        parse_run_config(data)


def test_config_file_errors(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_run_config(str(tmp_path / 'missing.json'))
    path = tmp_path / 'broken.json'
    path.write_text('{"name": ')
    with pytest.raises(ConfigurationError, match='invalid JSON'):
        load_run_config(str(path))


def test_desk_config_values():
    config = load_run_config(DESK_CONFIG)
    assert config.image_size == (256, 192)
    assert config.thresholds.merge_min_group == 1
    assert config.train.shrink == 0.5
    assert config.camera('front').focal == 320.0
    with pytest.raises(ConfigurationError):
        config.camera('rear')


def test_train_defaults_halve_rate_every_five_epochs():
    train = TrainConfig()
    assert train.lr_decay_every == 5 and train.lr_decay_factor == 0.5
    schedule = train.lr_schedule()
    assert schedule.rate_at(4) == pytest.approx(0.01)
    assert schedule.rate_at(5) == pytest.approx(0.005)
    assert schedule.rate_at(10) == pytest.approx(0.0025)


def _record(tmp_path, frame_id='f0') -> FrameRecord:
    image_path = tmp_path / 'images' / f'{frame_id}.ppm'
    write_image(str(image_path), np.zeros((48, 64, 3), dtype=np.uint8))
    return FrameRecord(
        frame_id=frame_id,
        image=str(image_path),
        vehicles=[VehicleBox(1.0, 2.0, 30.0, 40.0, depth=12.5, score=1.0)],
        lanes=[GroundTruthLane([[5.0, 40.0], [20.0, 10.0]], [6.0, 30.0], [False, True], boundary_index=-1)],
        pose=(1.0, 2.0, 0.0, 0.1),
        lanes3d={-1: np.array([[5.0, -1.8, 0.0], [50.0, -1.8, 0.0]])},
        radar=[RadarReturn(15.0, 20.0, 12.0)],
    )


def test_manifest_round_trip(tmp_path):
    record = _record(tmp_path)
    manifest = tmp_path / 'manifest.jsonl'
    write_manifest(str(manifest), [record])
    assert '"image": "images/f0.ppm"' in manifest.read_text()

    (loaded,) = load_dataset(str(manifest))
    assert loaded.frame_id == record.frame_id
    assert os.path.samefile(loaded.image, record.image)
    assert loaded.vehicles == record.vehicles
    np.testing.assert_array_equal(loaded.lanes[0].points, record.lanes[0].points)
    np.testing.assert_array_equal(loaded.lanes[0].occluded, [False, True])
    assert loaded.lanes[0].boundary_index == -1
    assert loaded.pose == record.pose
    np.testing.assert_array_equal(loaded.lanes3d[-1], record.lanes3d[-1])
    assert loaded.radar == record.radar


def test_manifest_errors_name_the_line(tmp_path):
    empty = tmp_path / 'empty.jsonl'
    empty.write_text('')
    assert load_dataset(str(empty)) == []

    record = _record(tmp_path)
    manifest = tmp_path / 'manifest.jsonl'
    write_manifest(str(manifest), [record])
    good = manifest.read_text()

    manifest.write_text(good + '{"frame_id": "f1", "image": "images/f0.ppm", "extra": 1}\n')
    with pytest.raises(ConfigurationError, match=r'manifest\.jsonl:2:.*unknown keys'):
        load_dataset(str(manifest))

    manifest.write_text(good + 'not json\n')
    with pytest.raises(ConfigurationError, match=r':2: invalid JSON'):
        load_dataset(str(manifest))

    manifest.write_text(good + good)
    with pytest.raises(ConfigurationError, match='duplicate frame_id'):
        load_dataset(str(manifest))

    manifest.write_text(good.replace('images/f0.ppm', 'images/missing.ppm'))
    with pytest.raises(ConfigurationError, match='image not found'):
        load_dataset(str(manifest))
    assert len(load_dataset(str(manifest), check_files=False)) == 1

    with pytest.raises(FileNotFoundError):
        load_dataset(str(tmp_path / 'absent.jsonl'))


def _labels() -> FrameLabels:
    return FrameLabels(
        vehicles=[VehicleBox(10.0, 20.0, 50.0, 60.0, depth=15.0)],
        lanes=[GroundTruthLane([[5.0, 90.0], [40.0, 50.0], [60.0, 30.0]], [5.0, 20.0, 40.0])],
    )


def test_identity_augmentation_changes_nothing():
    image = np.random.default_rng(0).integers(0, 256, (96, 128, 3), dtype=np.uint8)
    labels = _labels()
    out, out_labels = augment(image, labels, 'identity')
    np.testing.assert_array_equal(out, image)
    assert out_labels is labels


def test_translation_shifts_labels_exactly():
    image = np.random.default_rng(1).integers(0, 256, (96, 128, 3), dtype=np.uint8)
    out, labels = augment(image, _labels(), 'translation', offset=(10, 4))
    assert labels.vehicles[0].rect == (20.0, 24.0, 60.0, 64.0)
    assert labels.vehicles[0].depth == 15.0
    np.testing.assert_array_equal(labels.lanes[0].points, _labels().lanes[0].points + [10.0, 4.0])
    np.testing.assert_array_equal(out[4:, 10:], image[:-4, :-10])
    assert not out[:4].any() and not out[:, :10].any()

    _, seeded_a = augment(image, _labels(), 'translation', seed=7)
    _, seeded_b = augment(image, _labels(), 'translation', seed=7)
    assert seeded_a.vehicles == seeded_b.vehicles


def test_perspective_warp_moves_markers_like_labels():
    """Bright markers land where the homography maps their centers, within 1 px"""
    size = (128, 96)
    image = np.zeros((size[1], size[0], 3), dtype=np.uint8)
    corners = [(18, 18), (100, 18), (100, 70), (18, 70)]
    for x, y in corners:
        image[y:y + 5, x:x + 5] = 255
    centers = np.array([[x + 2.5, y + 2.5] for x, y in corners])

    warped, _ = augment(image, FrameLabels(), 'perspective', k=3)
    expected = apply_homography(perspective_homography(3, size), centers)

    gray = warped[..., 0].astype(np.float64)
    blobs, count = ndimage.label(gray > 0)
    assert count == 4
    found = np.array(ndimage.center_of_mass(gray, blobs, range(1, count + 1)))[:, ::-1] + 0.5
    for point in expected:
        assert np.min(np.hypot(*(found - point).T)) <= 1.0


def test_augmentation_errors():
    image = np.zeros((8, 8, 3), dtype=np.uint8)
    with pytest.raises(ConfigurationError):
        augment(image, FrameLabels(), 'mirror')
    with pytest.raises(ConfigurationError):
        augment(image, FrameLabels(), 'perspective', k=7)
    with pytest.raises(ConfigurationError):
        check_invertible(np.array([[1.0, 2.0, 0.0], [2.0, 4.0, 0.0], [0.0, 0.0, 1.0]]))
    with pytest.raises(ConfigurationError):
        warp_image(image, np.zeros((3, 3)))


def test_infer_schema_and_empty_input(tmp_path):
    _, _, config, manifest, checkpoint = _dataset()
    out = tmp_path / 'detections.jsonl'
    assert run_infer(config, checkpoint, [], str(out), show_progress=False) == []
    assert out.read_text() == ''

    records = load_dataset(manifest)
    results = run_infer(config, checkpoint, records, str(out), show_progress=False)
    assert [r.frame_id for r in results] == [r.frame_id for r in records]
    parsed = read_detections(str(out))
    assert len(parsed) == len(records)
    for line in parsed:
        assert set(line) == {'frame_id', 'vehicles', 'lanes'}

    with pytest.raises(ConfigurationError):
        validate_detection({'frame_id': 'x', 'vehicles': [], 'lanes': [], 'extra': 1})
    with pytest.raises(ConfigurationError):
        validate_detection({'frame_id': 'x', 'vehicles': [], 'lanes': [{'id': 0, 'knots': [[1, 2]]}]})


def test_pipeline_is_deterministic(tmp_path):
    _, _, config, manifest, checkpoint = _dataset()
    records = load_dataset(manifest)
    first, second = tmp_path / 'a.jsonl', tmp_path / 'b.jsonl'
    run_infer(config, checkpoint, records, str(first), show_progress=False)
    run_infer(dataclasses.replace(config, workers=2), checkpoint, records, str(second), show_progress=False)
    assert first.read_bytes() == second.read_bytes()

    run_eval(config, records, read_detections(str(first)), out_dir=str(tmp_path / 'eval_a'))
    run_eval(config, records, read_detections(str(second)), out_dir=str(tmp_path / 'eval_b'))
    for name in sorted(os.listdir(tmp_path / 'eval_a')):
        assert (tmp_path / 'eval_a' / name).read_bytes() == (tmp_path / 'eval_b' / name).read_bytes()


def test_eval_of_ground_truth_detections(tmp_path):
    _, _, config, manifest, _ = _dataset()
    records = load_dataset(manifest)
    detections = [
        {'frame_id': r.frame_id, 'vehicles': [box.to_dict() for box in r.vehicles], 'lanes': []} for r in records
    ]
    result = run_eval(config, records, detections)
    summary = result.vehicles.summary()
    assert summary.fp == 0 and summary.fn == 0
    assert summary.tp == sum(len(r.vehicles) for r in records)
    assert result.lanes.summary().tp == 0
    paths = result.write(str(tmp_path))
    assert all(os.path.exists(path) for path in paths)
    assert os.path.join(str(tmp_path), 'lanes_ego.json') in paths


def test_bench_report():
    _, _, config, manifest, checkpoint = _dataset()
    records = load_dataset(manifest)[:1]
    report = run_bench(config, records, checkpoint, repeat=1, sweep=(64, 128, 256, 512), show_progress=False)
    for name in ('forward', 'extract', 'merge', 'lanes', 'total'):
        assert len(report.stages[name].samples) == 1
    assert report.merge_exponent <= 2.2
    data = report.to_dict()
    assert 'hardware' in data['note']
    assert [row['n'] for row in data['merge_sweep']] == [64, 128, 256, 512]
    with pytest.raises(ConfigurationError):
        run_bench(config, records, repeat=0, show_progress=False)


def test_render_writes_overlays(tmp_path):
    _, _, config, manifest, _ = _dataset()
    records = load_dataset(manifest)[:1]
    detections = [{'frame_id': records[0].frame_id, 'vehicles': [], 'lanes': []}]
    written = run_render(config, records, str(tmp_path), detections, show_progress=False)
    assert sorted(os.path.basename(p) for p in written) == sorted(
        f"{records[0].frame_id}_{kind}.png" for kind in ('labels', 'detections', 'lanes_top')
    )
    assert depth_color(10.0) == (255, 0, 0) and depth_color(80.0) == (0, 0, 255)


def test_exit_codes():
    assert exit_code_for(NumericError('nan')) == EXIT_NUMERIC == 2
    assert exit_code_for(ConfigurationError('bad')) == EXIT_VALIDATION == 1
    assert exit_code_for(FileNotFoundError('gone')) == EXIT_VALIDATION


def test_cli_commands(tmp_path):
    root, config_path, _, manifest, checkpoint = _dataset()
    out = str(tmp_path)
    assert cli_main(['infer', '--config', config_path, '--manifest', manifest,
                     '--checkpoint', checkpoint, '--out', out, '--quiet']) == EXIT_OK
    detections = os.path.join(out, 'detections.jsonl')
    assert os.path.exists(detections)
    assert cli_main(['eval', '--config', config_path, '--manifest', manifest,
                     '--detections', detections, '--out', out, '--quiet']) == EXIT_OK
    assert os.path.exists(os.path.join(out, 'vehicles.json'))

    with pytest.raises(SystemExit) as missing:
        cli_main(['eval', '--config', config_path, '--manifest', manifest,
                  '--detections', os.path.join(out, 'absent.jsonl'), '--out', out, '--quiet'])
    assert missing.value.code == EXIT_VALIDATION

    bad = tmp_path / 'bad.json'
    bad.write_text(json.dumps({**_desk_json(), 'unknown_key': True}))
    with pytest.raises(SystemExit) as invalid:
        cli_main(['synth', '--config', str(bad), '--out', out, '--quiet'])
    assert invalid.value.code == EXIT_VALIDATION


def main():
    """Run all tests"""
    from pathlib import Path

    print("\n" + "=" * 60)
    print("Pipeline tests")
    print("=" * 60)

    tests = [value for name, value in sorted(globals().items()) if name.startswith('test_') and callable(value)]
    for test in tests:
        if 'tmp_path' in test.__code__.co_varnames[:test.__code__.co_argcount]:
            with tempfile.TemporaryDirectory() as tmp:
                test(Path(tmp))
        else:
            test()
        print(f"  ok  {test.__name__}")

    print("\n" + "=" * 60)
    print(f"All {len(tests)} tests passed!")
    print("=" * 60)


if __name__ == "__main__":
    main()
