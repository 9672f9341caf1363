from django.apps import AppConfig


class DoaConfig(AppConfig):
    default_auto_field = 'django.db.models.BigAutoField'
    name = 'doa'
    verbose_name = 'Spherical Array DOA Estimation'

    def ready(self):
        """
        Called when app is fully loaded
        Makes the run models available via app_config
        """
        from .models import EstimationRun, SourceEstimate
        self.EstimationRun = EstimationRun
        self.SourceEstimate = SourceEstimate
