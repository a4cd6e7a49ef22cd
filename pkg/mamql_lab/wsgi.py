"""
WSGI entry point serving the run registry API
(datasets, training runs and their evaluations).
"""

import os

from django.core.wsgi import get_wsgi_application

os.environ.setdefault("DJANGO_SETTINGS_MODULE", "mamql_lab.settings")

application = get_wsgi_application()
