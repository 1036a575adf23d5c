import inspect
import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'kanscope.settings')
django.setup()


def pytest_pycollect_makeitem(collector, name, obj):
    """Do not collect library helpers named ``test_*`` that a test module imports."""
    module = getattr(collector, 'module', None)
    if inspect.isfunction(obj) and module is not None and obj.__module__ != module.__name__:
        return []
    return None
