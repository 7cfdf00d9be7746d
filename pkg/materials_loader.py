#!/usr/bin/env python3
"""
Material Presets Loader
Loads material presets from individual YAML files in the materials directory.
Each file holds one preset under the key ``<name>_material``; a preset may
``extends`` another one and list only the coefficients that differ.
"""

import logging
import os
from typing import Any, Dict, List, Optional

import yaml

from materials import MaterialRegion
from tpe_errors import MaterialError

logger = logging.getLogger(__name__)

DEFAULT_MATERIALS_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'materials')


class MaterialsLoader:
    def __init__(self, materials_dir: str = DEFAULT_MATERIALS_DIR):
        """Initialize with the presets directory path"""
        self.materials_dir = materials_dir

    def _read_preset(self, name: str) -> Dict[str, Any]:
        file_path = os.path.join(self.materials_dir, f"{name}.yaml")
        if not os.path.exists(file_path):
            raise MaterialError(f"material preset '{name}' not found in {self.materials_dir}")
        try:
            with open(file_path, 'r', encoding='utf-8') as f:
                file_content = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise MaterialError(f"cannot parse {file_path}: {e}")

        # The file structure is: {name}_material: {coefficient: value, ...}
        top_level_key = f"{name}_material"
        if top_level_key not in file_content:
            raise MaterialError(f"{file_path}: expected top-level key '{top_level_key}'")
        return dict(file_content[top_level_key])

    def load_preset(self, name: str, _chain: Optional[List[str]] = None) -> Dict[str, Any]:
        """Coefficient dictionary of a preset with its ``extends`` chain resolved"""
        chain = (_chain or []) + [name]
        if name in (_chain or []):
            raise MaterialError(f"circular material inheritance: {' -> '.join(chain)}")
        raw = self._read_preset(name)
        parent = raw.pop('extends', None)
        raw.pop('description', None)
        if parent is None:
            return raw
        merged = self.load_preset(parent, chain)
        merged.update(raw)
        return merged

    def get_region(self, name: str, overrides: Optional[Dict[str, Any]] = None) -> MaterialRegion:
        coefficients = self.load_preset(name)
        if overrides:
            coefficients.update(overrides)
        return MaterialRegion.from_dict(coefficients, source=f"preset '{name}'")

    def describe(self, name: str) -> str:
        raw = self._read_preset(name)
        return str(raw.get('description', ''))

    def list_available_presets(self) -> List[str]:
        if not os.path.isdir(self.materials_dir):
            logger.warning("materials directory %s not found", self.materials_dir)
            return []
        return sorted(f[:-5] for f in os.listdir(self.materials_dir) if f.endswith('.yaml'))


def resolve_material(spec: Dict[str, Any], loader: MaterialsLoader,
                     source: str = 'material') -> MaterialRegion:
    """Region from a config block: either ``preset`` (plus overrides) or explicit coefficients"""
    spec = dict(spec)
    preset = spec.pop('preset', None)
    if preset is not None:
        return loader.get_region(preset, spec)
    return MaterialRegion.from_dict(spec, source=source)
