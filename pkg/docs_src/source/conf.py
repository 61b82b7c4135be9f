# Sphinx configuration for the ratervar API docs.
import os
import sys

import sphinx_rtd_theme
from recommonmark.parser import CommonMarkParser

source_parsers = {".md": CommonMarkParser}
source_suffix = [".rst", ".md"]

sys.path.insert(0, os.path.abspath("../../src"))

project = "ratervar"
copyright = "2026, the ratervar developers"
author = "the ratervar developers"
release = "0.1.0"

extensions = [
    "sphinx.ext.autodoc",
    "sphinx.ext.coverage",
    "sphinx.ext.napoleon",
    "sphinx.ext.doctest",
    "sphinx_rtd_theme",
]
napoleon_numpy_docstring = True
autodoc_member_order = "bysource"

templates_path = ["_templates"]
exclude_patterns = []

html_theme = "sphinx_rtd_theme"
html_theme_options = {
    "navigation_depth": 4,
}
html_static_path = []
