"""
ArtifactHasher module for fingerprinting configurations, corpora and checkpoints
"""

import hashlib
import json
from pathlib import Path
from typing import Any, Dict, Sequence

import xxhash

CHUNK_SIZE = 1 << 20


class ArtifactHasher:
    """Consistent hashes for run manifests"""

    @staticmethod
    def generate_content_hash(data: Dict[str, Any]) -> str:
        """Generate MD5 hash of a JSON-serialisable mapping, independent of key order"""
        content_str = json.dumps(data, sort_keys=True)
        return hashlib.md5(content_str.encode('utf-8')).hexdigest()

    @staticmethod
    def hash_file(path: Path) -> str:
        """xxh64 of a file's bytes"""
        digest = xxhash.xxh64()
        with open(path, 'rb') as f:
            for chunk in iter(lambda: f.read(CHUNK_SIZE), b''):
                digest.update(chunk)
        return digest.hexdigest()

    @staticmethod
    def hash_directory(path: Path, exclude: Sequence[str] = ()) -> Dict[str, str]:
        """xxh64 of every regular file below path, keyed by relative path"""
        path = Path(path)
        return {str(file.relative_to(path)): ArtifactHasher.hash_file(file)
                for file in sorted(path.rglob('*'))
                if file.is_file() and not file.name.startswith('.') and file.name not in exclude}
