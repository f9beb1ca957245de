# diffc_lab/lab/__init__.py
