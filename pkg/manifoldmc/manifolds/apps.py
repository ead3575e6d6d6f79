from django.apps import AppConfig


class ManifoldsConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'manifolds'
    verbose_name = 'Constraint manifold sampling and integration'
