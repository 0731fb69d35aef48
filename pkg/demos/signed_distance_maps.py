"""
Signed distance maps from label volumes
=======================================

A label mask becomes a signed distance map (negative inside the organ,
positive outside), is scaled into [-1, 1], and is turned back into a
segmentation through the smooth logistic step.
"""

from sdmseg.cli import ppm_bytes, render_slice
from sdmseg.edt import sdm_volume
from sdmseg.heaviside import HeavisideConfig, seg_from_sdm
from sdmseg.phantom import PhantomSpec, generate

# a two-lobe phantom, a little anisotropic along z
spec = PhantomSpec(dims=(32, 24, 24), spacing=(1.0, 1.0, 1.5), shape="two-lobe",
                   centres=((11.0, 11.5, 17.0), (19.0, 11.5, 17.0)),
                   radii=((6.0, 5.0, 6.0), (5.0, 4.0, 5.0)), blur_mm=0.8, seed=1)
image, labels = generate(spec)
print("organ voxels:", int(labels.data.sum()))

###############################################################################
# The distance map, in mm before scaling. ``pos_scale`` and ``neg_scale``
# are the constants that took it into [-1, 1].
sdm = sdm_volume(labels)
raw = sdm.denormalized()[0]
print("raw range (mm): %.2f .. %.2f" % (raw.min(), raw.max()))
print("scales:", sdm.pos_scale, sdm.neg_scale)

###############################################################################
# With k = 1500 the logistic step is essentially a hard threshold on
# normalized maps; the converted mask agrees with the labels.
seg = seg_from_sdm(sdm.data[0], HeavisideConfig(k=1500))
agree = ((seg > 0.5) == (labels.data == 1)).mean()
print("overlap after conversion: %.4f%%" % (100 * agree))

# the nearest voxel centres sit a full voxel from the surface, where k z is
# already far into saturation, so the step is 0 or 1 everywhere
print("non-saturated voxels:", int(((seg > 1e-6) & (seg < 1 - 1e-6)).sum()))

###############################################################################
# A mid-z slice with the 0, 0.1, 0.2 and 0.3 iso-contours drawn over the image.
k = 11
rgb = render_slice(image.data[:, :, k].T, sdm.data[0][:, :, k].T, scale=8)
with open("sdm_slice.ppm", "wb") as fh:
    fh.write(ppm_bytes(rgb))
print("wrote sdm_slice.ppm", rgb.shape)
