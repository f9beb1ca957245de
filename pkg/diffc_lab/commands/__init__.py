# diffc_lab/commands/__init__.py
