"""Configure Django so pytest can collect and run the manifolds test suite."""
import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'core.settings')
django.setup()
