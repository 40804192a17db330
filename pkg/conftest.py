import os

import django

os.environ.setdefault('DJANGO_SETTINGS_MODULE', 'FewShotVOS.settings')
django.setup()
