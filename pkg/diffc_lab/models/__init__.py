# diffc_lab/models/__init__.py
