# cli/__init__.py
# Thiqa Command Line Package
