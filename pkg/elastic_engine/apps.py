from django.apps import AppConfig


class ElasticEngineConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'elastic_engine'
