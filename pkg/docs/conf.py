# Sphinx configuration for merge-lattice-planner.

import os
import sys

sys.path.insert(0, os.path.abspath('../src'))

import merge_lattice_planner  # noqa: E402

extensions = ['sphinx.ext.autodoc', 'sphinx.ext.viewcode']
source_suffix = '.rst'
master_doc = 'index'

project = 'merge-lattice-planner'
copyright = "2023, Simon Hobbs"
author = "Simon Hobbs"
version = merge_lattice_planner.__version__
release = merge_lattice_planner.__version__

exclude_patterns = ['_build']
pygments_style = 'sphinx'
html_theme = 'alabaster'

autodoc_member_order = 'bysource'
autodoc_mock_imports = ['matplotlib', 'joblib']
