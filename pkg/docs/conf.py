# -*- coding: utf-8 -*-
# vim: set ft=python ts=4 sw=4 expandtab:

# Sphinx configuration for the Phasemap HTML documentation.  API pages are
# generated from the source tree with autoapi.

import os
import sys
from pathlib import Path

import toml

sys.path.insert(0, os.path.abspath("../src"))

# Version and release come from the Poetry metadata
metadata = toml.load(Path(__file__).parent.parent / "pyproject.toml")["tool"]["poetry"]

extensions = [
    "sphinx.ext.intersphinx",
    "sphinx.ext.todo",
    "sphinx.ext.napoleon",
    "autoapi.extension",
]

# Docstrings are Google style
napoleon_google_docstring = True
napoleon_numpy_docstring = False
napoleon_include_init_with_doc = True
napoleon_use_param = True
napoleon_use_rtype = True

autodoc_member_order = "bysource"
autoapi_type = "python"
autoapi_dirs = ["../src"]
autoapi_add_toctree_entry = True
autoapi_options = ["members", "undoc-members", "show-inheritance", "special-members"]

source_suffix = ".rst"
master_doc = "index"

project = "Phasemap"
copyright = "2022 Kenneth J. Pronovici"
author = "Kenneth J. Pronovici"
version = metadata["version"]
release = metadata["version"]

exclude_patterns = ["_build"]
add_function_parentheses = False
pygments_style = "sphinx"

html_theme = "alabaster"
html_theme_options = {
    "show_powered_by": False,
    "github_user": "pronovic",
    "github_repo": "phasemap",
    "github_banner": True,
    "show_related": False,
}
html_show_sourcelink = False
html_show_sphinx = False
htmlhelp_basename = "Phasemapdoc"

intersphinx_mapping = {
    "python": ("https://docs.python.org/3/", None),
    "numpy": ("https://numpy.org/doc/stable/", None),
    "scipy": ("https://docs.scipy.org/doc/scipy/", None),
}
