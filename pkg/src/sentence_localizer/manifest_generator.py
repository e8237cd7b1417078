"""
ManifestGenerator module for run manifests
"""

import json
import uuid
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, List, Optional

from sentence_localizer.artifact_hasher import ArtifactHasher

MANIFEST_FILE = 'manifest.json'
MANIFEST_VERSION = '1.0'


class ManifestGenerator:
    """Generates one manifest per command run: inputs, artifact hashes, timings and metrics"""

    def generate_manifest(self, command: str, argv: List[str], config: Dict[str, Any],
                          seed: Optional[int], artifacts: Dict[str, Path],
                          start_time: datetime, end_time: datetime,
                          metrics: Optional[Dict[str, Any]] = None) -> Dict[str, Any]:
        """
        Generate complete manifest for a command run

        Args:
            command: Subcommand name
            argv: Command line as invoked
            config: Resolved configuration
            seed: Seed of the run
            artifacts: Name -> file or directory of every input and output
            start_time: Start of the run
            end_time: End of the run
            metrics: Summary metrics of the run

        Returns:
            Dict containing complete manifest data
        """
        return {
            'manifest_id': str(uuid.uuid4()),
            'command': command,
            'command_line': list(argv),
            'generated_timestamp': datetime.now(timezone.utc).isoformat(),
            'seed': seed,
            'config': config,
            'config_hash': ArtifactHasher.generate_content_hash(config),
            'artifacts': self._hash_artifacts(artifacts),
            'metric_summary': metrics or {},
            'metadata': {
                'manifest_version': MANIFEST_VERSION,
                'generator': 'sentence_localizer',
                'processing_start': start_time.isoformat(),
                'processing_end': end_time.isoformat(),
                'duration_seconds': round((end_time - start_time).total_seconds(), 3)
            }
        }

    @staticmethod
    def _hash_artifacts(artifacts: Dict[str, Path]) -> Dict[str, Any]:
        hashed = {}
        for name, path in artifacts.items():
            path = Path(path)
            if path.is_dir():
                hashed[name] = {'path': str(path), 'files': ArtifactHasher.hash_directory(path, exclude=(MANIFEST_FILE,))}
            elif path.exists():
                hashed[name] = {'path': str(path), 'xxh64': ArtifactHasher.hash_file(path)}
            else:
                hashed[name] = {'path': str(path), 'xxh64': None}
        return hashed

    @staticmethod
    def reproducibility_key(manifest: Dict[str, Any]) -> str:
        """Hash of the inputs that determine a run's outputs: command, config, seed, input artifacts"""
        inputs = {name: entry for name, entry in manifest['artifacts'].items() if name.startswith('input')}
        return ArtifactHasher.generate_content_hash({
            'command': manifest['command'], 'config': manifest['config'],
            'seed': manifest['seed'], 'inputs': inputs
        })


def write_manifest(manifest: Dict[str, Any], out_dir: Path) -> Path:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / MANIFEST_FILE
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True, default=str), encoding='utf-8')
    return path
