# Services package for EgoLeak
