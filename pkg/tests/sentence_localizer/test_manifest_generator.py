"""
Test suite for ManifestGenerator and ArtifactHasher components
Following TDD approach with AAA pattern and descriptive naming
"""

import json
from datetime import datetime, timedelta, timezone

from sentence_localizer.artifact_hasher import ArtifactHasher
from sentence_localizer.manifest_generator import MANIFEST_FILE, ManifestGenerator, write_manifest


class TestArtifactHasher:
    """Test suite for configuration and artifact fingerprints"""

    def test_generate_content_hash_with_reordered_keys_returns_same_hash(self):
        """
        Test that mappings with the same content in another key order hash alike
        """
        # Arrange
        data1 = {'train': {'beta': 5.0, 'alpha': 1.0}, 'seed': 3}
        data2 = {'seed': 3, 'train': {'alpha': 1.0, 'beta': 5.0}}

        # Act
        hash1 = ArtifactHasher.generate_content_hash(data1)
        hash2 = ArtifactHasher.generate_content_hash(data2)

        # Assert
        assert hash1 == hash2
        assert len(hash1) == 32

    def test_hash_file_with_changed_byte_returns_different_hash(self, tmp_path):
        """
        Test that a one-byte change alters the file fingerprint
        """
        # Arrange
        path = tmp_path / 'checkpoint.bin'
        path.write_bytes(b'\x00\x01\x02\x03')
        before = ArtifactHasher.hash_file(path)

        # Act
        path.write_bytes(b'\x00\x01\x02\x04')
        after = ArtifactHasher.hash_file(path)

        # Assert
        assert before != after
        assert len(before) == 16

    def test_hash_directory_with_hidden_and_excluded_files_skips_them(self, tmp_path):
        """
        Test that dotfiles and excluded names are left out of directory hashes
        """
        # Arrange
        (tmp_path / 'train.jsonl').write_text('{}\n', encoding='utf-8')
        (tmp_path / '.train.jsonl.tmp').write_text('partial', encoding='utf-8')
        (tmp_path / MANIFEST_FILE).write_text('{}', encoding='utf-8')

        # Act
        hashes = ArtifactHasher.hash_directory(tmp_path, exclude=(MANIFEST_FILE,))

        # Assert
        assert list(hashes) == ['train.jsonl']


class TestManifestGenerator:
    """Test suite for run manifests"""

    def setup_method(self):
        """Set up test fixtures before each test method"""
        self.manifest_generator = ManifestGenerator()
        self.base_time = datetime.now(timezone.utc)

    def test_generate_manifest_with_artifacts_records_hashes_and_timings(self, tmp_path):
        """
        Test that a manifest lists every artifact with its hash and the run duration
        """
        # Arrange
        corpus_dir = tmp_path / 'corpus'
        corpus_dir.mkdir()
        (corpus_dir / 'train.jsonl').write_text('{}\n', encoding='utf-8')
        checkpoint = tmp_path / 'checkpoint.bin'
        checkpoint.write_bytes(b'weights')

        # Act
        manifest = self.manifest_generator.generate_manifest(
            command='train', argv=['train', '--seed', '3'], config={'train': {'seed': 3}}, seed=3,
            artifacts={'input_corpus': corpus_dir, 'output_checkpoint': checkpoint,
                       'output_missing': tmp_path / 'absent.bin'},
            start_time=self.base_time, end_time=self.base_time + timedelta(seconds=90),
            metrics={'best_val_miou': 0.42})

        # Assert
        assert manifest['command'] == 'train'
        assert manifest['seed'] == 3
        assert list(manifest['artifacts']['input_corpus']['files']) == ['train.jsonl']
        assert manifest['artifacts']['output_checkpoint']['xxh64'] == ArtifactHasher.hash_file(checkpoint)
        assert manifest['artifacts']['output_missing']['xxh64'] is None
        assert manifest['metric_summary'] == {'best_val_miou': 0.42}
        assert manifest['metadata']['duration_seconds'] == 90.0

    def test_reproducibility_key_with_same_inputs_ignores_outputs_and_timing(self, tmp_path):
        """
        Test that runs with identical command, config, seed and inputs share a key
        """
        # Arrange
        corpus_dir = tmp_path / 'corpus'
        corpus_dir.mkdir()
        (corpus_dir / 'train.jsonl').write_text('{}\n', encoding='utf-8')
        first_out = tmp_path / 'a.txt'
        second_out = tmp_path / 'b.txt'
        first_out.write_text('one', encoding='utf-8')
        second_out.write_text('two', encoding='utf-8')

        def manifest(output, minutes):
            return self.manifest_generator.generate_manifest(
                command='evaluate', argv=[], config={'eval': {'split': 'test'}}, seed=0,
                artifacts={'input_corpus': corpus_dir, 'output_eval': output},
                start_time=self.base_time, end_time=self.base_time + timedelta(minutes=minutes))

        # Act
        key1 = ManifestGenerator.reproducibility_key(manifest(first_out, 1))
        key2 = ManifestGenerator.reproducibility_key(manifest(second_out, 5))

        # Assert
        assert key1 == key2

    def test_reproducibility_key_with_other_seed_differs(self):
        """
        Test that the seed is part of the key
        """
        # Arrange
        kwargs = dict(command='generate', argv=[], config={}, artifacts={},
                      start_time=self.base_time, end_time=self.base_time)

        # Act
        key1 = ManifestGenerator.reproducibility_key(self.manifest_generator.generate_manifest(seed=1, **kwargs))
        key2 = ManifestGenerator.reproducibility_key(self.manifest_generator.generate_manifest(seed=2, **kwargs))

        # Assert
        assert key1 != key2

    def test_write_manifest_with_output_directory_writes_json(self, tmp_path):
        """
        Test that the manifest is written as JSON into the run directory
        """
        # Arrange
        manifest = self.manifest_generator.generate_manifest(
            command='generate', argv=[], config={}, seed=0, artifacts={},
            start_time=self.base_time, end_time=self.base_time)

        # Act
        path = write_manifest(manifest, tmp_path / 'run')

        # Assert
        assert path.name == MANIFEST_FILE
        assert json.loads(path.read_text(encoding='utf-8'))['manifest_id'] == manifest['manifest_id']
