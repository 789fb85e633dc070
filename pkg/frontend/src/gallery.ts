/** Gallery view model: manifest entries -> selectable thumbnails. */

export interface GalleryEntry {
  id: string;
  domain: string;
  image_path: string;
  mask_path: string;
  seed: number;
}

export interface GalleryItem {
  id: string;
  domain: string;
  imageUrl: string;
  maskUrl: string;
  label: string;
}

/** One thumbnail per manifest entry, ordered as served. */
export function galleryItems(entries: GalleryEntry[], baseUrl = ""): GalleryItem[] {
  return entries.map((entry) => ({
    id: entry.id,
    domain: entry.domain,
    imageUrl: `${baseUrl}/gallery/${entry.image_path}`,
    maskUrl: `${baseUrl}/gallery/${entry.mask_path}`,
    label: `${entry.id} (${entry.domain === "Y" ? "makeup" : "bare"})`,
  }));
}

/** Static HTML for the thumbnail grid; the app attaches click handlers by id. */
export function renderGalleryHtml(items: GalleryItem[]): string {
  const cells = items
    .map(
      (item) =>
        `<button class="thumb" data-id="${item.id}" data-domain="${item.domain}">` +
        `<img src="${item.imageUrl}" alt="${item.label}"><span>${item.label}</span></button>`
    )
    .join("\n");
  return `<div class="gallery">\n${cells}\n</div>`;
}
