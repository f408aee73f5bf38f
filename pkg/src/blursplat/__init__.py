from .dataset_settings import DatasetSettings as DatasetSettings, DatasetNotFoundError as DatasetNotFoundError
from .dataset import Dataset as Dataset, DatasetError as DatasetError, SceneConfig as SceneConfig, generate_dataset as generate_dataset, load_dataset as load_dataset
from .liegroup import SE3Pose as SE3Pose, Twist as Twist, se3_exp as se3_exp, se3_log as se3_log, bernstein as bernstein
from .trajectory import BezierTrajectory as BezierTrajectory, LinearTrajectory as LinearTrajectory, SplineTrajectory as SplineTrajectory, bezier_pose as bezier_pose, linear_pose as linear_pose, spline_pose as spline_pose
from .scene import Camera as Camera, Gaussian3D as Gaussian3D, SceneModel as SceneModel, covariance3d as covariance3d, project as project, evaluate_density as evaluate_density
from .renderer import ImageBuffer as ImageBuffer, RenderSettings as RenderSettings, render as render, render_blurred as render_blurred, render_backward as render_backward
from .eventsim import EventStream as EventStream, generate_events as generate_events, bin_events as bin_events, synthesize_burst as synthesize_burst
from .edi import EdiConfig as EdiConfig, edi_deblur as edi_deblur, edi_init_views as edi_init_views
from .sfm_init import NoiseProfile as NoiseProfile, noise_profile as noise_profile, perturb_poses as perturb_poses, sample_pointcloud as sample_pointcloud
from .optimizer import OptimConfig as OptimConfig, TrainState as TrainState, TrainView as TrainView, photometric_loss as photometric_loss, train_step as train_step, train as train, mcmc_relocate as mcmc_relocate, checkpoint_save as checkpoint_save, checkpoint_load as checkpoint_load
from .metrics import EvalReport as EvalReport, psnr as psnr, ssim as ssim, ape as ape
from .formats import load_scene as load_scene, save_scene as save_scene, read_tum as read_tum, write_tum as write_tum
